//! Stationary distribution of the fluid queue regulated at level 0.
//!
//! The process regenerates each time it returns to level 0 in a down phase.
//! With `ρ` the stationary vector of the phase at those epochs and
//! `[p_down p_zero] = ρᵀM(0)` the expected time spent at level 0 per cycle,
//!
//! ```text
//! G(x) = c·[0, p_down, p_zero]
//!      + c·(p_downᵀQ₋₊ + p_zeroᵀQ₀₊)(−K)⁻¹(I − e^{Kx})[C₊⁻¹  Ψ|C₋|⁻¹  Γ]
//! ```
//!
//! where `Γ = (C₊⁻¹Q₊₀ + Ψ|C₋|⁻¹Q₋₀)(−Q₀₀)⁻¹` and `c` normalises the total
//! mass to 1.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{FluidError, Result};
use crate::model::{Block, CensoredGenerator, PhasePartition, Regime};
use crate::numerics::{div_rows, expm, hstack, stationary_of};
use crate::riccati::RiccatiSolution;

#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    /// Stationary vector of `H = ΦΨ` (phase at regeneration epochs).
    pub rho: DVector<f64>,
    pub p_down: DVector<f64>,
    pub p_zero: DVector<f64>,
    /// m₊×m₀ matrix of time spent in zero-rate phases per unit crossing.
    pub gamma: DMatrix<f64>,
    /// Reciprocal of the expected cycle length `ρᵀm`.
    pub norm_c: f64,
    /// Expected cycle length by starting down phase.
    pub mean_cycle: DVector<f64>,
    /// `G(0)` in original phase order.
    pub boundary_mass: DVector<f64>,
    /// Stationary phase vector of `Q`, original order.
    pub alpha: DVector<f64>,
    k: DMatrix<f64>,
    neg_k_inv: DMatrix<f64>,
    /// `c·(p_downᵀQ₋₊ + p_zeroᵀQ₀₊)`.
    lead: RowDVector<f64>,
    /// `[C₊⁻¹  Ψ|C₋|⁻¹  Γ]`, columns in permuted order.
    right: DMatrix<f64>,
    /// `c·[0, p_down, p_zero]`, permuted order.
    atom: RowDVector<f64>,
    partition: PhasePartition,
}

/// Pieces shared by the stationary law and the mean cycle length.
struct CycleParts {
    /// `M(0)`: m₋×(m₋+m₀).
    m0: DMatrix<f64>,
    neg_k_inv: DMatrix<f64>,
    gamma: DMatrix<f64>,
    right: DMatrix<f64>,
    /// `[[Q₋₊], [Q₀₊]]`.
    into_up: DMatrix<f64>,
}

fn require_positive_recurrent(solution: &RiccatiSolution) -> Result<()> {
    if solution.regime != Regime::PositiveRecurrent {
        return Err(FluidError::Regime { required: "positive recurrent", actual: solution.regime });
    }
    Ok(())
}

fn cycle_parts(censored: &CensoredGenerator, solution: &RiccatiSolution) -> Result<CycleParts> {
    let (mu, md, mz) = (censored.m_up(), censored.m_down(), censored.m_zero());
    let q = censored.q_permuted();

    let down_zero = -censored.down_zero_block(0.0);
    let inv = down_zero.try_inverse().ok_or_else(|| FluidError::Singular("down/zero block of Q".into()))?;
    let m0 = inv.rows(0, md).into_owned();

    let neg_k_inv = (-&solution.k).try_inverse().ok_or_else(|| FluidError::Singular("K is singular".into()))?;

    let inv_c_up = DMatrix::from_diagonal(&censored.c_up().map(|c| 1.0 / c));
    let psi_scaled = div_cols(&solution.psi, censored.c_down_abs());
    let gamma = if mz == 0 {
        DMatrix::zeros(mu, 0)
    } else {
        let q_up_zero = censored.q_block(Block::Up, Block::Zero);
        let q_down_zero = censored.q_block(Block::Down, Block::Zero);
        let flow =
            div_rows(&q_up_zero, censored.c_up()) + &solution.psi * div_rows(&q_down_zero, censored.c_down_abs());
        let neg_q00 = -censored.q_block(Block::Zero, Block::Zero);
        let inv00 = neg_q00.try_inverse().ok_or_else(|| FluidError::Singular("zero-rate block of Q".into()))?;
        flow * inv00
    };
    let right = hstack(&[&inv_c_up, &psi_scaled, &gamma]);
    let into_up = q.view((mu, 0), (md + mz, mu)).into_owned();
    Ok(CycleParts { m0, neg_k_inv, gamma, right, into_up })
}

/// `A·diag(d)⁻¹`.
fn div_cols(a: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / d[j])
}

/// Expected regeneration-cycle length `m = M(0)1 + Φ(−K)⁻¹(C₊⁻¹1 + Ψ|C₋|⁻¹1 + Γ1)`.
pub fn mean_cycle(censored: &CensoredGenerator, solution: &RiccatiSolution) -> Result<DVector<f64>> {
    require_positive_recurrent(solution)?;
    let parts = cycle_parts(censored, solution)?;
    Ok(mean_cycle_from(&parts, solution))
}

fn mean_cycle_from(parts: &CycleParts, solution: &RiccatiSolution) -> DVector<f64> {
    let ones_m0 = DVector::from_element(parts.m0.ncols(), 1.0);
    let ones_r = DVector::from_element(parts.right.ncols(), 1.0);
    &parts.m0 * ones_m0 + &solution.phi * (&parts.neg_k_inv * (&parts.right * ones_r))
}

pub fn stationary_distribution(
    censored: &CensoredGenerator,
    solution: &RiccatiSolution,
) -> Result<StationaryDistribution> {
    require_positive_recurrent(solution)?;
    let (mu, md) = (censored.m_up(), censored.m_down());
    let parts = cycle_parts(censored, solution)?;

    let h = solution.h();
    let id = DMatrix::<f64>::identity(md, md);
    let rho = stationary_of(&(&h - &id))?;

    let p = parts.m0.tr_mul(&rho);
    let p_down = p.rows(0, md).into_owned();
    let p_zero = p.rows(md, p.len() - md).into_owned();

    let mean_cycle = mean_cycle_from(&parts, solution);
    let norm_c = 1.0 / rho.dot(&mean_cycle);

    let lead = (p.transpose() * &parts.into_up) * norm_c;
    let mut atom = RowDVector::zeros(censored.dim());
    for (k, &v) in p.iter().enumerate() {
        atom[mu + k] = norm_c * v;
    }

    let partition = censored.partition().clone();
    let boundary_mass = partition.unpermute_vector(&atom.transpose());

    Ok(StationaryDistribution {
        rho,
        p_down,
        p_zero,
        gamma: parts.gamma,
        norm_c,
        mean_cycle,
        boundary_mass,
        alpha: censored.alpha().clone(),
        k: solution.k.clone(),
        neg_k_inv: parts.neg_k_inv,
        lead,
        right: parts.right,
        atom,
        partition,
    })
}

impl StationaryDistribution {
    /// `P[Y ≤ x, φ = i]` for every phase `i`, original order.
    pub fn cdf(&self, x: f64) -> Result<DVector<f64>> {
        if !(x >= 0.0) {
            return Err(FluidError::InvalidArgument(format!("cdf needs x >= 0, got {x}")));
        }
        let n = self.k.nrows();
        let decay = DMatrix::<f64>::identity(n, n) - expm(&(&self.k * x));
        let g = &self.atom + &self.lead * &self.neg_k_inv * decay * &self.right;
        Ok(self.partition.unpermute_vector(&g.transpose()))
    }

    /// Density of the level on `(0, ∞)` by phase, original order.
    pub fn density(&self, x: f64) -> Result<DVector<f64>> {
        if !(x > 0.0) {
            return Err(FluidError::InvalidArgument(format!("density needs x > 0, got {x}")));
        }
        let g = &self.lead * expm(&(&self.k * x)) * &self.right;
        Ok(self.partition.unpermute_vector(&g.transpose()))
    }

    /// `G(∞)`; equals `α` up to rounding.
    pub fn limit(&self) -> DVector<f64> {
        let g = &self.atom + &self.lead * &self.neg_k_inv * &self.right;
        self.partition.unpermute_vector(&g.transpose())
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn partition(&self) -> &PhasePartition {
        &self.partition
    }
}
