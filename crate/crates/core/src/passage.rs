//! First-passage transforms and two-sided escape probabilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{FluidError, Result};
use crate::model::{censored_matrix, classify, Block, CensoredGenerator, Regime};
use crate::numerics::{block2, expm, group_inverse_of_singular, hstack};
use crate::riccati::{critical_correction, iterate, phi_matrix, RiccatiProblem, RiccatiSolution, SolverOptions};
use crate::stationary;

/// Laplace–Stieltjes transforms of the regeneration-cycle pieces at `s`,
/// i.e. the probabilities that each piece ends before an independent
/// exponential deadline of rate `s`.
#[derive(Debug, Clone)]
pub struct TransformPoint {
    pub s: f64,
    /// Censored generator with every diagonal shifted by `−s`.
    pub t_s: DMatrix<f64>,
    /// m₋×m₊: leaving level 0.
    pub phi_s: DMatrix<f64>,
    /// m₊×m₋: returning to level 0.
    pub psi_s: DMatrix<f64>,
    /// m₋×m₋: `phi_s · psi_s`, a full cycle.
    pub h_s: DMatrix<f64>,
    pub iterations: usize,
}

/// Transforms at `s ≥ 0`.
pub fn transform_at(censored: &CensoredGenerator, s: f64, options: &SolverOptions) -> Result<TransformPoint> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(FluidError::InvalidArgument(format!("transform needs finite s >= 0, got {s}")));
    }
    transform_unchecked(censored, s, options)
}

/// Same as [`transform_at`] but also accepts small negative `s`, where the
/// transforms stay finite as long as the cycle has exponential moments of
/// order `|s|`. Used for symmetric difference quotients at `s = 0`.
pub fn transform_continued(censored: &CensoredGenerator, s: f64, options: &SolverOptions) -> Result<TransformPoint> {
    if !s.is_finite() {
        return Err(FluidError::InvalidArgument(format!("transform needs finite s, got {s}")));
    }
    transform_unchecked(censored, s, options)
}

fn transform_unchecked(censored: &CensoredGenerator, s: f64, options: &SolverOptions) -> Result<TransformPoint> {
    let moving = censored.m_up() + censored.m_down();
    let t_s = censored_matrix(censored.q_permuted(), moving, s)?;
    let problem = RiccatiProblem::new(&t_s, censored.c_up(), censored.c_down_abs());
    let mut solved = iterate(&problem, options)?;
    if s == 0.0 && classify(censored) == Regime::NullRecurrent {
        solved = critical_correction(&problem, solved, options.tol);
    }
    let phi_s = phi_matrix(censored, s)?;
    let h_s = &phi_s * &solved.psi;
    Ok(TransformPoint { s, t_s, phi_s, psi_s: solved.psi, h_s, iterations: solved.iterations })
}

/// Expected regeneration-cycle length by starting down phase; requires `μ < 0`.
pub fn mean_first_return(censored: &CensoredGenerator, solution: &RiccatiSolution) -> Result<DVector<f64>> {
    stationary::mean_cycle(censored, solution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeMode {
    Regular,
    NullRecurrent,
}

/// Auxiliary vectors of the zero-drift solution, `(up, down)` order.
#[derive(Debug, Clone)]
pub struct NullAux {
    /// Left null vector of `I + 𝒫`, positive on the up block, max up entry 1.
    pub eta: DVector<f64>,
    /// `[b·1 + h₊; −a·1 + h₋]`.
    pub beta: DVector<f64>,
    pub w: DVector<f64>,
    /// `−Q#c` restricted to moving phases.
    pub h: DVector<f64>,
    /// `−Q#c` on all phases, original order.
    pub h_full: DVector<f64>,
    /// `‖ηᵀ(I + 𝒫)‖∞`.
    pub eta_residual: f64,
}

/// Phase distribution at first exit from `(−a, b)` starting at level 0.
#[derive(Debug, Clone)]
pub struct EscapeResult {
    pub a: f64,
    pub b: f64,
    /// m×m₊: exit through `b` in each up phase. Rows in original phase order.
    pub upper: DMatrix<f64>,
    /// m×m₋: exit through `−a` in each down phase. Rows in original phase order.
    pub lower: DMatrix<f64>,
    pub mode: EscapeMode,
    pub aux: Option<NullAux>,
    /// `(m₊+m₋)` square block for moving starting phases, `(up, down)` order.
    pub central: DMatrix<f64>,
    /// The matrix `𝒫`.
    pub p_matrix: DMatrix<f64>,
    /// The matrix `𝒰`.
    pub u_matrix: DMatrix<f64>,
}

impl EscapeResult {
    /// `[upper lower]`, rows in original phase order.
    pub fn combined(&self) -> DMatrix<f64> {
        hstack(&[&self.upper, &self.lower])
    }
}

pub fn escape(censored: &CensoredGenerator, solution: &RiccatiSolution, a: f64, b: f64) -> Result<EscapeResult> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(FluidError::InvalidArgument(format!("escape needs finite a, b > 0, got a = {a}, b = {b}")));
    }
    let (p, q) = (censored.m_up(), censored.m_down());
    let width = a + b;
    let down_return = &solution.psi * expm(&(&solution.u * width));
    let up_return = &solution.psi_hat * expm(&(&solution.u_hat * width));
    let p_matrix = block2(&DMatrix::zeros(p, p), &down_return, &up_return, &DMatrix::zeros(q, q));
    let reach_b = expm(&(&solution.u_hat * b));
    let reach_a = expm(&(&solution.u * a));
    let u_matrix = block2(&reach_b, &(&solution.psi * &reach_a), &(&solution.psi_hat * &reach_b), &reach_a);
    let i_plus_p = DMatrix::<f64>::identity(p + q, p + q) + &p_matrix;

    let (central, mode, aux) = if solution.regime == Regime::NullRecurrent {
        let (central, aux) = null_central(censored, &u_matrix, &i_plus_p, a, b)?;
        (central, EscapeMode::NullRecurrent, Some(aux))
    } else {
        // 𝒰(I+𝒫)⁻¹ = ((I+𝒫)ᵀ \ 𝒰ᵀ)ᵀ
        let central = i_plus_p
            .transpose()
            .lu()
            .solve(&u_matrix.transpose())
            .ok_or_else(|| FluidError::Singular("I + 𝒫".into()))?
            .transpose();
        (central, EscapeMode::Regular, None)
    };

    let zero_rows = escape_zero_rows(censored, &central)?;
    let full = if zero_rows.nrows() > 0 {
        let mut m = DMatrix::zeros(censored.dim(), p + q);
        m.rows_mut(0, p + q).copy_from(&central);
        m.rows_mut(p + q, zero_rows.nrows()).copy_from(&zero_rows);
        m
    } else {
        central.clone()
    };
    let full = censored.partition().unpermute_rows(&full);
    Ok(EscapeResult {
        a,
        b,
        upper: full.columns(0, p).into_owned(),
        lower: full.columns(p, q).into_owned(),
        mode,
        aux,
        central,
        p_matrix,
        u_matrix,
    })
}

fn null_central(
    censored: &CensoredGenerator,
    u_matrix: &DMatrix<f64>,
    i_plus_p: &DMatrix<f64>,
    a: f64,
    b: f64,
) -> Result<(DMatrix<f64>, NullAux)> {
    let (p, q) = (censored.m_up(), censored.m_down());
    let gi = group_inverse_of_singular(i_plus_p)?;
    let mut eta = gi.left_null.clone().expect("rank-one path yields null vectors");
    if eta.rows(0, p).sum() < 0.0 {
        eta = -eta;
    }
    let top = eta.rows(0, p).max();
    if !(top > 0.0) {
        return Err(FluidError::Numerical("left null vector of I + 𝒫 has no positive up entry".into()));
    }
    eta /= top;
    let eta_residual = (eta.transpose() * i_plus_p).amax();

    let h_full = drift_deviation(censored)?;
    let h_perm = censored.partition().permute_vector(&h_full);
    let h = h_perm.rows(0, p + q).into_owned();
    let mut beta = h.clone();
    for i in 0..p {
        beta[i] += b;
    }
    for i in p..p + q {
        beta[i] -= a;
    }
    let eb = eta.dot(&beta);
    if !(eb > 1e-12) {
        return Err(FluidError::Numerical(format!("ηᵀβ = {eb:e} is not positive")));
    }
    let base = u_matrix * &gi.sharp;
    let w = (&h - &base * &beta) / eb;
    let central = base + &w * eta.transpose();
    Ok((central, NullAux { eta, beta, w, h, h_full, eta_residual }))
}

/// `h = −Q#c`, original phase order.
pub fn drift_deviation(censored: &CensoredGenerator) -> Result<DVector<f64>> {
    let partition = censored.partition();
    let q = partition.unpermute_rows(censored.q_permuted());
    // columns back to original order as well
    let q = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, partition.position[j])]);
    let gi = group_inverse_of_singular(&q)?;
    Ok(-(&gi.sharp * censored.rates()))
}

/// Rows of `[B A]` for starting phases with zero rate:
/// `(−Q₀₀)⁻¹[Q₀₊ Q₀₋]·central`.
pub fn escape_zero_rows(censored: &CensoredGenerator, central: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mz = censored.m_zero();
    if mz == 0 {
        return Ok(DMatrix::zeros(0, central.ncols()));
    }
    let neg_q00 = -censored.q_block(Block::Zero, Block::Zero);
    let exits = hstack(&[&censored.q_block(Block::Zero, Block::Up), &censored.q_block(Block::Zero, Block::Down)]);
    let weights = neg_q00.lu().solve(&exits).ok_or_else(|| FluidError::Singular("zero-rate block of Q".into()))?;
    Ok(weights * central)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{censor, partition_phases, FluidModel};
    use crate::riccati::solve;
    use approx::assert_abs_diff_eq;

    fn setup(q: &[f64], c: &[f64]) -> (CensoredGenerator, RiccatiSolution) {
        let m = c.len();
        let model = FluidModel::new(DMatrix::from_row_slice(m, m, q), DVector::from_column_slice(c), None).unwrap();
        let cg = censor(&model, &partition_phases(&model)).unwrap();
        let s = solve(&cg, &SolverOptions::default()).unwrap();
        (cg, s)
    }

    #[test]
    fn regular_mode_fixture() {
        let (cg, s) = setup(&[-2.0, 2.0, 1.0, -1.0], &[1.0, -1.0]);
        let l = 2f64.ln();
        let e = escape(&cg, &s, l, l).unwrap();
        assert_eq!(e.mode, EscapeMode::Regular);
        let expected = DMatrix::from_row_slice(2, 2, &[3.0 / 7.0, 4.0 / 7.0, 1.0 / 7.0, 6.0 / 7.0]);
        assert_abs_diff_eq!(e.combined(), expected, epsilon = 1e-10);
    }

    #[test]
    fn null_mode_closed_form() {
        let (cg, s) = setup(&[-1.0, 1.0, 1.0, -1.0], &[1.0, -1.0]);
        for (a, b) in [(1.0, 1.0), (1.0, 2.0), (0.5, 2.0)] {
            let e = escape(&cg, &s, a, b).unwrap();
            assert_eq!(e.mode, EscapeMode::NullRecurrent);
            let d = a + b + 1.0;
            let expected = DMatrix::from_row_slice(2, 2, &[(a + 1.0) / d, b / d, a / d, (b + 1.0) / d]);
            assert_abs_diff_eq!(e.combined(), expected, epsilon = 1e-10);
            let aux = e.aux.unwrap();
            assert!(aux.eta_residual <= 1e-9);
        }
    }

    #[test]
    fn zero_rows_average_up_and_down() {
        let (cg, s) = setup(&[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0], &[1.0, -1.0, 0.0]);
        let e = escape(&cg, &s, 1.0, 1.5).unwrap();
        let c = e.combined();
        for j in 0..2 {
            assert_abs_diff_eq!(c[(2, j)], 0.5 * (c[(0, j)] + c[(1, j)]), epsilon = 1e-12);
        }
        for i in 0..3 {
            assert_abs_diff_eq!(c.row(i).sum(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn invalid_interval() {
        let (cg, s) = setup(&[-2.0, 2.0, 1.0, -1.0], &[1.0, -1.0]);
        assert!(escape(&cg, &s, 0.0, 1.0).is_err());
        assert!(escape(&cg, &s, 1.0, -1.0).is_err());
    }

    #[test]
    fn transform_at_zero_matches_h() {
        let (cg, s) = setup(&[-1.0, 1.0, 2.0, -2.0], &[1.0, -1.0]);
        let t = transform_at(&cg, 0.0, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(t.h_s[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.h_s, s.h(), epsilon = 1e-12);
        assert!(transform_at(&cg, -0.1, &SolverOptions::default()).is_err());
        let far = transform_at(&cg, 1e3, &SolverOptions::default()).unwrap();
        assert!(far.h_s.amax() <= 1e-3);
    }

    #[test]
    fn mean_cycle_fixture() {
        let (cg, s) = setup(&[-2.0, 2.0, 1.0, -1.0], &[1.0, -1.0]);
        assert_abs_diff_eq!(mean_first_return(&cg, &s).unwrap()[0], 3.0, epsilon = 1e-10);
    }
}
