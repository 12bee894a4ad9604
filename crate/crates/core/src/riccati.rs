//! First-return matrix `Ψ` and its companions.
//!
//! With `C₊`, `|C₋|` the diagonal matrices of up and (absolute) down rates
//! and `T` the censored generator, `Ψ` is the minimal nonnegative solution of
//!
//! ```text
//! C₊⁻¹T₊₋ + C₊⁻¹T₊₊ Ψ + Ψ |C₋|⁻¹T₋₋ + Ψ |C₋|⁻¹T₋₊ Ψ = 0.
//! ```
//!
//! The dual matrix `Ψ̂` solves the same equation with the up and down blocks
//! exchanged, so both are computed by one solver on a [`RiccatiProblem`] and
//! its [`dual`](RiccatiProblem::dual).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FluidError, Result};
use crate::model::{classify, Block, CensoredGenerator, Regime};
use crate::numerics::{self, block2, div_rows, inf_norm, solve_sylvester};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER_FUNCTIONAL: usize = 1_000_000;
pub const DEFAULT_MAX_ITER_NEWTON: usize = 200;

/// Allowed entrywise decrease between successive functional iterates.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Functional,
    Newton,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Functional => "functional",
            Algorithm::Newton => "newton",
        }
    }

    pub fn default_max_iter(self) -> usize {
        match self {
            Algorithm::Functional => DEFAULT_MAX_ITER_FUNCTIONAL,
            Algorithm::Newton => DEFAULT_MAX_ITER_NEWTON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub algorithm: Algorithm,
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverOptions {
    pub fn new(algorithm: Algorithm) -> Self {
        SolverOptions { algorithm, tol: DEFAULT_TOL, max_iter: algorithm.default_max_iter() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions::new(Algorithm::Newton)
    }
}

/// Level-scaled blocks of a censored generator: `C₊⁻¹T₊₊`, `C₊⁻¹T₊₋`,
/// `|C₋|⁻¹T₋₊`, `|C₋|⁻¹T₋₋`.
#[derive(Debug, Clone)]
pub struct RiccatiProblem {
    pub up_up: DMatrix<f64>,
    pub up_down: DMatrix<f64>,
    pub down_up: DMatrix<f64>,
    pub down_down: DMatrix<f64>,
}

impl RiccatiProblem {
    /// `t` is indexed by `(up, down)` phases in that order.
    pub fn new(t: &DMatrix<f64>, c_up: &nalgebra::DVector<f64>, c_down_abs: &nalgebra::DVector<f64>) -> Self {
        let (p, q) = (c_up.len(), c_down_abs.len());
        assert_eq!(t.shape(), (p + q, p + q));
        let blk = |r: usize, c: usize, nr: usize, nc: usize| t.view((r, c), (nr, nc)).into_owned();
        RiccatiProblem {
            up_up: div_rows(&blk(0, 0, p, p), c_up),
            up_down: div_rows(&blk(0, p, p, q), c_up),
            down_up: div_rows(&blk(p, 0, q, p), c_down_abs),
            down_down: div_rows(&blk(p, p, q, q), c_down_abs),
        }
    }

    pub fn from_censored(censored: &CensoredGenerator) -> Self {
        RiccatiProblem::new(censored.t(), censored.c_up(), censored.c_down_abs())
    }

    /// The problem for `Ψ̂`: up and down blocks exchanged.
    pub fn dual(&self) -> Self {
        RiccatiProblem {
            up_up: self.down_down.clone(),
            up_down: self.down_up.clone(),
            down_up: self.up_down.clone(),
            down_down: self.up_up.clone(),
        }
    }

    pub fn m_up(&self) -> usize {
        self.up_up.nrows()
    }

    pub fn m_down(&self) -> usize {
        self.down_down.nrows()
    }

    /// Size of the coefficients, at least 1. The residual cannot be driven
    /// much below `ε` times this.
    pub fn scale(&self) -> f64 {
        [&self.up_up, &self.up_down, &self.down_up, &self.down_down].iter().map(|m| inf_norm(m)).fold(1.0, f64::max)
    }

    /// `‖C₊⁻¹T₊₋ + C₊⁻¹T₊₊Ψ + Ψ|C₋|⁻¹T₋₋ + Ψ|C₋|⁻¹T₋₊Ψ‖∞`.
    pub fn residual(&self, psi: &DMatrix<f64>) -> f64 {
        inf_norm(&self.residual_matrix(psi))
    }

    fn residual_matrix(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        &self.up_down + &self.up_up * psi + psi * &self.down_down + psi * &self.down_up * psi
    }

    /// `|C₋|⁻¹T₋₋ + |C₋|⁻¹T₋₊Ψ`.
    pub fn u_of(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        &self.down_down + &self.down_up * psi
    }

    /// `C₊⁻¹T₊₊ + Ψ|C₋|⁻¹T₋₊`.
    pub fn k_of(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        &self.up_up + psi * &self.down_up
    }

    /// The matrix `C⁻¹T` in `(up, down)` order, with the signed rates.
    pub fn drift_scaled_generator(&self) -> DMatrix<f64> {
        block2(&self.up_up, &self.up_down, &(-&self.down_up), &(-&self.down_down))
    }
}

/// Result of one iterative solve for `Ψ`.
#[derive(Debug, Clone)]
pub struct PsiIterate {
    pub psi: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub last_step: f64,
}

/// Iteration-difference stopping rule. Convergence is declared when the
/// step drops below `tol`, or when the residual is already below `tol` and
/// the step has stopped shrinking (rounding floor reached). Newton also
/// stops when its linear system becomes singular with the residual below `tol`.
/// The residual bound is `tol` times the coefficient scale, so stiff models
/// with very slow rates are not held to an unreachable absolute floor.
fn converged(step: f64, previous_step: f64, residual: f64, residual_tol: f64, tol: f64) -> bool {
    step <= tol || (residual <= residual_tol && step >= previous_step)
}

/// Functional iteration: `Ψ₀ = 0`, `U_{n−1} = |C₋|⁻¹T₋₋ + |C₋|⁻¹T₋₊Ψ_{n−1}`,
/// then `Ψₙ` from `C₊⁻¹T₊₋ + C₊⁻¹T₊₊Ψₙ + ΨₙU_{n−1} = 0`.
///
/// The iterates are entrywise nondecreasing; a decrease larger than `1e-12`
/// is reported as a numerical fault.
pub fn iterate_functional(problem: &RiccatiProblem, tol: f64, max_iter: usize) -> Result<PsiIterate> {
    let mut psi = DMatrix::zeros(problem.m_up(), problem.m_down());
    let residual_tol = tol * problem.scale();
    let mut previous_step = f64::INFINITY;
    let mut residual = problem.residual(&psi);
    for n in 1..=max_iter {
        let u = problem.u_of(&psi);
        let next = solve_sylvester(&problem.up_up, &u, &problem.up_down)?;
        let diff = &next - &psi;
        let decrease = -diff.min();
        if decrease > MONOTONE_SLACK {
            return Err(FluidError::Monotonicity { iteration: n, decrease });
        }
        let step = diff.amax();
        psi = next;
        residual = problem.residual(&psi);
        if converged(step, previous_step, residual, residual_tol, tol) {
            return Ok(PsiIterate { psi, iterations: n, residual, last_step: step });
        }
        previous_step = step;
    }
    Err(FluidError::NotConverged { algorithm: "functional", iterations: max_iter, last_step: previous_step, residual })
}

/// Newton iteration from `Ψ₀ = 0`: each step solves
/// `(C₊⁻¹T₊₊ + ΨₙR)X + X(|C₋|⁻¹T₋₋ + R'Ψₙ) + C₊⁻¹T₊₋ − ΨₙR'Ψₙ = 0`
/// with `R' = |C₋|⁻¹T₋₊`, i.e. a Sylvester equation in `Kₙ` and `Uₙ`.
pub fn iterate_newton(problem: &RiccatiProblem, tol: f64, max_iter: usize) -> Result<PsiIterate> {
    let mut psi = DMatrix::zeros(problem.m_up(), problem.m_down());
    let residual_tol = tol * problem.scale();
    let mut previous_step = f64::INFINITY;
    let mut residual = problem.residual(&psi);
    for n in 1..=max_iter {
        let k = problem.k_of(&psi);
        let u = problem.u_of(&psi);
        let c = &problem.up_down - &psi * &problem.down_up * &psi;
        let next = match solve_sylvester(&k, &u, &c) {
            Ok(x) => x,
            // At zero drift the linearisation turns singular as Ψₙ reaches
            // the double root; by then the residual is already at its floor.
            Err(FluidError::SingularPencil { .. }) if n > 1 && residual <= residual_tol => {
                return Ok(PsiIterate { psi, iterations: n - 1, residual, last_step: previous_step });
            }
            Err(e) => return Err(e),
        };
        let step = (&next - &psi).amax();
        let next_residual = problem.residual(&next);
        // Same near-singular regime: a step that worsens an already
        // acceptable residual is noise, and taking it restarts the descent.
        if residual <= residual_tol && !(next_residual <= residual) {
            return Ok(PsiIterate { psi, iterations: n - 1, residual, last_step: previous_step });
        }
        psi = next;
        residual = next_residual;
        if converged(step, previous_step, residual, residual_tol, tol) {
            return Ok(PsiIterate { psi, iterations: n, residual, last_step: step });
        }
        previous_step = step;
    }
    Err(FluidError::NotConverged { algorithm: "newton", iterations: max_iter, last_step: previous_step, residual })
}

pub fn iterate(problem: &RiccatiProblem, options: &SolverOptions) -> Result<PsiIterate> {
    check_options(options)?;
    match options.algorithm {
        Algorithm::Functional => iterate_functional(problem, options.tol, options.max_iter),
        Algorithm::Newton => iterate_newton(problem, options.tol, options.max_iter),
    }
}

fn check_options(options: &SolverOptions) -> Result<()> {
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(FluidError::InvalidArgument(format!(
            "solver needs tol > 0 and max_iter > 0, got {} and {}",
            options.tol, options.max_iter
        )));
    }
    Ok(())
}

/// `Ψ` together with every matrix derived from it.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// m₊×m₋ first-return probabilities starting upward.
    pub psi: DMatrix<f64>,
    /// m₋×m₊ first-return probabilities starting downward.
    pub psi_hat: DMatrix<f64>,
    /// Generator of the phase at successive record lows.
    pub u: DMatrix<f64>,
    /// Generator of the phase at successive record highs.
    pub u_hat: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub k_hat: DMatrix<f64>,
    /// m₋×m₊ phase distribution when leaving level 0.
    pub phi: DMatrix<f64>,
    pub iterations: usize,
    pub dual_iterations: usize,
    pub residual: f64,
    pub dual_residual: f64,
    pub algorithm: Algorithm,
    pub regime: Regime,
    /// Set for null-recurrent models, where neither iteration keeps its
    /// usual convergence rate.
    pub slow_mode: bool,
}

impl RiccatiSolution {
    /// `H = ΦΨ`, the phase transition matrix between regeneration epochs.
    pub fn h(&self) -> DMatrix<f64> {
        &self.phi * &self.psi
    }
}

pub fn solve_psi_functional(censored: &CensoredGenerator, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    solve(censored, &SolverOptions::new(Algorithm::Functional).with_tol(tol).with_max_iter(max_iter))
}

pub fn solve_psi_newton(censored: &CensoredGenerator, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    solve(censored, &SolverOptions::new(Algorithm::Newton).with_tol(tol).with_max_iter(max_iter))
}

/// Solves for `Ψ` and fills in all derived matrices.
pub fn solve(censored: &CensoredGenerator, options: &SolverOptions) -> Result<RiccatiSolution> {
    let problem = RiccatiProblem::from_censored(censored);
    let primal = iterate(&problem, options)?;
    derive_all(censored, primal, options)
}

/// Computes `Ψ̂` (same algorithm, dual problem), `U`, `Û`, `K`, `K̂` and `Φ`.
pub fn derive_all(censored: &CensoredGenerator, psi: PsiIterate, options: &SolverOptions) -> Result<RiccatiSolution> {
    let problem = RiccatiProblem::from_censored(censored);
    let mut psi = psi;
    let mut dual = iterate(&problem.dual(), options)?;
    let regime = classify(censored);
    if regime == Regime::NullRecurrent {
        psi = critical_correction(&problem, psi, options.tol);
        dual = critical_correction(&problem.dual(), dual, options.tol);
    }

    let u = problem.u_of(&psi.psi);
    let k = problem.k_of(&psi.psi);
    let dual_problem = problem.dual();
    let u_hat = dual_problem.u_of(&dual.psi);
    let k_hat = dual_problem.k_of(&dual.psi);
    let phi = phi_matrix(censored, 0.0)?;

    Ok(RiccatiSolution {
        psi: psi.psi,
        psi_hat: dual.psi,
        u,
        u_hat,
        k,
        k_hat,
        phi,
        iterations: psi.iterations,
        dual_iterations: dual.iterations,
        residual: psi.residual,
        dual_residual: dual.residual,
        algorithm: options.algorithm,
        regime,
        slow_mode: regime == Regime::NullRecurrent,
    })
}

/// Final refinement for zero drift, where `Ψ1 = 1` holds exactly.
///
/// At zero drift the Newton operator `X ↦ KX + XU` is singular at the
/// solution, so iterates are only determined to about the square root of
/// machine precision along its null direction. Adding the row-sum equations
/// makes the linearisation full rank; a few least-squares Gauss–Newton steps
/// on the stacked system then recover full accuracy. The result is kept only
/// if its Riccati residual stays within `max(previous residual, tol)`.
pub(crate) fn critical_correction(problem: &RiccatiProblem, it: PsiIterate, tol: f64) -> PsiIterate {
    const STEPS: usize = 3;
    let (p, q) = (problem.m_up(), problem.m_down());
    let n = p * q;
    let mut psi = it.psi.clone();
    for _ in 0..STEPS {
        let k = problem.k_of(&psi);
        let u = problem.u_of(&psi);
        let op =
            DMatrix::<f64>::identity(q, q).kronecker(&k) + u.transpose().kronecker(&DMatrix::<f64>::identity(p, p));
        let mut stacked = DMatrix::zeros(n + p, n);
        stacked.rows_mut(0, n).copy_from(&op);
        for j in 0..q {
            for i in 0..p {
                stacked[(n + i, i + j * p)] = 1.0;
            }
        }
        let f = problem.residual_matrix(&psi);
        let rows = psi.column_sum();
        let mut rhs = DVector::zeros(n + p);
        for (idx, v) in f.iter().enumerate() {
            rhs[idx] = -v;
        }
        for i in 0..p {
            rhs[n + i] = 1.0 - rows[i];
        }
        let delta = match stacked.svd(true, true).solve(&rhs, 1e-14) {
            Ok(d) => d,
            Err(_) => return it,
        };
        psi += DMatrix::from_column_slice(p, q, delta.as_slice());
    }
    let residual = problem.residual(&psi);
    if residual > it.residual.max(tol) {
        return it;
    }
    PsiIterate { psi, residual, ..it }
}

/// `[I 0](−[[Q₋₋ − sI, Q₋₀], [Q₀₋, Q₀₀ − sI]])⁻¹[[Q₋₊], [Q₀₊]]`; `s = 0` gives `Φ`.
pub(crate) fn phi_matrix(censored: &CensoredGenerator, s: f64) -> Result<DMatrix<f64>> {
    let neg = -censored.down_zero_block(s);
    let m_up = censored.m_up();
    let rhs = censored.q_permuted().view((m_up, 0), (censored.dim() - m_up, m_up)).into_owned();
    let x = neg.lu().solve(&rhs).ok_or_else(|| FluidError::Singular("down/zero block of Q".into()))?;
    Ok(x.rows(0, censored.m_down()).into_owned())
}

/// Wiener–Hopf factorisation diagnostics.
#[derive(Debug, Clone)]
pub struct WienerHopfReport {
    /// `‖C⁻¹T·[[I,Ψ],[Ψ̂,I]] − [[I,Ψ],[Ψ̂,I]]·diag(Û, −U)‖∞`.
    pub res_u: f64,
    /// `‖[[I,−Ψ],[−Ψ̂,I]]·C⁻¹T − diag(K, −K̂)·[[I,−Ψ],[−Ψ̂,I]]‖∞`.
    pub res_k: f64,
    /// Eigenvalues of `C⁻¹T`, ordered by real part.
    pub eigenvalues: Vec<Complex64>,
    pub lambda_low: Complex64,
    pub lambda_high: Complex64,
    /// Ordering, reality and drift-dependent sign pattern of the two central eigenvalues.
    pub separation_ok: bool,
    /// Largest mismatch between the spectra of `diag(Û, −U)` and `C⁻¹T`.
    pub spectrum_gap: f64,
    /// `‖K(I − ΨΨ̂) − (I − ΨΨ̂)Û‖∞`, only when `μ ≠ 0`.
    pub similarity_res: Option<f64>,
}

/// Tolerance used for "equal to zero" and "real" in the eigenvalue checks.
pub const EIGEN_TOL: f64 = 1e-6;

pub fn wiener_hopf_residuals(solution: &RiccatiSolution, censored: &CensoredGenerator) -> WienerHopfReport {
    let problem = RiccatiProblem::from_censored(censored);
    let (p, q) = (problem.m_up(), problem.m_down());
    let ct = problem.drift_scaled_generator();
    let ip = DMatrix::<f64>::identity(p, p);
    let iq = DMatrix::<f64>::identity(q, q);

    let left = block2(&ip, &solution.psi, &solution.psi_hat, &iq);
    let diag_u = block2(&solution.u_hat, &DMatrix::zeros(p, q), &DMatrix::zeros(q, p), &(-&solution.u));
    let res_u = inf_norm(&(&ct * &left - &left * &diag_u));

    let right = block2(&ip, &(-&solution.psi), &(-&solution.psi_hat), &iq);
    let diag_k = block2(&solution.k, &DMatrix::zeros(p, q), &DMatrix::zeros(q, p), &(-&solution.k_hat));
    let res_k = inf_norm(&(&right * &ct - &diag_k * &right));

    let eigenvalues = numerics::sorted_eigenvalues(&ct);
    let lambda_low = eigenvalues[p - 1];
    let lambda_high = eigenvalues[p];
    let separation_ok = separation_holds(&eigenvalues, p, solution.regime);
    let spectrum_gap = numerics::spectrum_distance(&numerics::sorted_eigenvalues(&diag_u), &eigenvalues);

    let similarity_res = (solution.regime != Regime::NullRecurrent).then(|| {
        let w = &ip - &solution.psi * &solution.psi_hat;
        inf_norm(&(&solution.k * &w - &w * &solution.u_hat))
    });

    WienerHopfReport { res_u, res_k, eigenvalues, lambda_low, lambda_high, separation_ok, spectrum_gap, similarity_res }
}

fn separation_holds(ev: &[Complex64], m_up: usize, regime: Regime) -> bool {
    let lo = ev[m_up - 1];
    let hi = ev[m_up];
    let is_zero = |z: Complex64| z.norm() <= EIGEN_TOL;
    let real = lo.im.abs() <= EIGEN_TOL && hi.im.abs() <= EIGEN_TOL;
    let below = m_up < 2 || ev[m_up - 2].re < lo.re - EIGEN_TOL;
    let above = m_up + 1 >= ev.len() || hi.re + EIGEN_TOL < ev[m_up + 1].re;
    let ordered = lo.re <= hi.re + EIGEN_TOL;
    let signs = match regime {
        Regime::PositiveRecurrent => lo.re < -EIGEN_TOL && is_zero(hi),
        Regime::NullRecurrent => is_zero(lo) && is_zero(hi),
        Regime::Transient => is_zero(lo) && hi.re > EIGEN_TOL,
    };
    real && below && above && ordered && signs
}

/// Row sums of a matrix.
pub fn row_sums(a: &DMatrix<f64>) -> Vec<f64> {
    a.row_iter().map(|r| r.sum()).collect()
}

/// The block of `T` for a pair of moving blocks; re-exported for callers
/// that work from a solution alone.
pub fn censored_block(censored: &CensoredGenerator, rows: Block, cols: Block) -> DMatrix<f64> {
    censored.t_block(rows, cols)
}
