use nalgebra::{DMatrix, DVector};

use super::{block2, inf_norm};
use crate::error::{FluidError, Result};

const SINGULAR_REL_TOL: f64 = 1e-10;

/// Group inverse `K#` of a matrix with at most one (semisimple) zero eigenvalue.
///
/// When `K` is singular, `right_null = v` and `left_null = u` satisfy
/// `Kv = 0`, `uᵀK = 0`, `uᵀv = 1`, with `v` scaled so that its entry of
/// largest magnitude is `+1`; then `K#K = I − vuᵀ` and `K#v = 0`. When `K`
/// is nonsingular, `sharp = K⁻¹` and both null vectors are absent.
#[derive(Debug, Clone)]
pub struct GroupInverseResult {
    pub sharp: DMatrix<f64>,
    pub left_null: Option<DVector<f64>>,
    pub right_null: Option<DVector<f64>>,
}

impl GroupInverseResult {
    pub fn is_singular(&self) -> bool {
        self.right_null.is_some()
    }
}

/// Computes `K#`, detecting singularity from the smallest singular value
/// (`σ_min ≤ 1e-10·‖K‖∞`).
pub fn group_inverse(k: &DMatrix<f64>) -> Result<GroupInverseResult> {
    let n = square(k)?;
    let (sigma, order) = singular_values(k);
    let thresh = SINGULAR_REL_TOL * inf_norm(k);
    if sigma[order[0]] > thresh {
        let sharp =
            k.clone().try_inverse().ok_or_else(|| FluidError::Singular("group inverse: K not invertible".into()))?;
        return Ok(GroupInverseResult { sharp, left_null: None, right_null: None });
    }
    if n > 1 && sigma[order[1]] <= thresh {
        return Err(FluidError::RankDeficient(sigma[order[1]]));
    }
    rank_one(k)
}

/// Group inverse of a matrix known to have exactly one zero eigenvalue, such
/// as the generator of an irreducible chain or a critical-drift `K`. The
/// null vectors are taken from the smallest singular triple even when
/// rounding has left it slightly away from zero.
pub fn group_inverse_of_singular(k: &DMatrix<f64>) -> Result<GroupInverseResult> {
    let n = square(k)?;
    let (sigma, order) = singular_values(k);
    let thresh = SINGULAR_REL_TOL * inf_norm(k);
    if n > 1 && sigma[order[1]] <= thresh {
        return Err(FluidError::RankDeficient(sigma[order[1]]));
    }
    rank_one(k)
}

fn square(k: &DMatrix<f64>) -> Result<usize> {
    if k.nrows() != k.ncols() || k.nrows() == 0 {
        return Err(FluidError::DimensionMismatch(format!(
            "group inverse needs a nonempty square matrix, got {:?}",
            k.shape()
        )));
    }
    Ok(k.nrows())
}

/// Singular values and their indices in increasing order.
fn singular_values(k: &DMatrix<f64>) -> (DVector<f64>, Vec<usize>) {
    let sigma = k.clone().singular_values();
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]));
    (sigma, order)
}

/// Right singular vector of the smallest singular value.
fn smallest_right_vector(k: &DMatrix<f64>) -> DVector<f64> {
    let svd = k.clone().svd(false, true);
    let idx = (0..k.nrows()).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap_or(0);
    svd.v_t.as_ref().expect("right singular vectors requested").row(idx).transpose()
}

fn rank_one(k: &DMatrix<f64>) -> Result<GroupInverseResult> {
    let n = k.nrows();
    let mut v = smallest_right_vector(k);
    let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    v /= pivot;

    // The left factor of the same decomposition can be off by ~1e-6 for the
    // null direction; the right factor of the transpose is accurate.
    let mut u = smallest_right_vector(&k.transpose());
    let uv = u.dot(&v);
    if uv.abs() <= 1e-12 * u.norm() * v.norm() {
        return Err(FluidError::Numerical(
            "zero eigenvalue is not semisimple (left and right null vectors are orthogonal)".into(),
        ));
    }
    u /= uv;

    // [[K, v], [uᵀ, 0]]⁻¹ = [[K#, v], [uᵀ, 0]]
    let bordered = block2(
        k,
        &DMatrix::from_column_slice(n, 1, v.as_slice()),
        &DMatrix::from_row_slice(1, n, u.as_slice()),
        &DMatrix::zeros(1, 1),
    );
    let inv = bordered.try_inverse().ok_or_else(|| FluidError::Singular("bordered group-inverse system".into()))?;
    let sharp = inv.view((0, 0), (n, n)).into_owned();
    Ok(GroupInverseResult { sharp, left_null: Some(u), right_null: Some(v) })
}
