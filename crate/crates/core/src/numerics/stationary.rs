use nalgebra::{DMatrix, DVector};

use crate::error::{FluidError, Result};

/// Stationary probability vector `α` of an irreducible generator:
/// `αᵀG = 0`, `αᵀ1 = 1`.
///
/// Grassmann–Taksar–Heyman elimination. Only off-diagonal rates enter the
/// computation and no subtraction occurs, so the result is strictly
/// positive for any irreducible input. A zero pivot means the chain is
/// reducible, i.e. the system has more than a rank-one deficiency.
pub fn stationary_of(g: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = g.nrows();
    if g.ncols() != n || n == 0 {
        return Err(FluidError::DimensionMismatch(format!(
            "stationary vector needs a nonempty square generator, got {:?}",
            g.shape()
        )));
    }
    let mut a = g.clone();
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(FluidError::Singular(format!(
                "generator is reducible: state {k} has no rate into states 0..{k}"
            )));
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let aik = a[(i, k)];
            if aik != 0.0 {
                for j in 0..k {
                    a[(i, j)] += aik * a[(k, j)];
                }
            }
        }
    }
    let mut pi = DVector::zeros(n);
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * a[(i, k)]).sum();
    }
    let total = pi.sum();
    pi /= total;
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(FluidError::Singular("generator is reducible".into()));
    }
    Ok(pi)
}
