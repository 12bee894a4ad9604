use nalgebra::{DMatrix, DVector};

use super::inf_norm;
use crate::error::{FluidError, Result};

/// `‖AX + XB + C‖∞`.
pub fn sylvester_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    inf_norm(&(a * x + x * b + c))
}

/// Solves `AX + XB + C = 0` for `X` (`A` is p×p, `B` is q×q, `C` is p×q).
///
/// The equation is vectorised column-major into the Kronecker system
/// `(I_q ⊗ A + Bᵀ ⊗ I_p) vec X = −vec C` and solved by LU with one step of
/// iterative refinement. A pencil that is singular or nearly so shows up as
/// a residual above `1e-10·(1 + ‖C‖∞)`.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let q = b.nrows();
    if a.ncols() != p || b.ncols() != q || c.shape() != (p, q) {
        return Err(FluidError::DimensionMismatch(format!(
            "Sylvester: A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let n = p * q;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..q {
        let base = j * p;
        for k in 0..p {
            for i in 0..p {
                l[(base + i, base + k)] = a[(i, k)];
            }
        }
        for m in 0..q {
            let bmj = b[(m, j)];
            if bmj != 0.0 {
                let other = m * p;
                for i in 0..p {
                    l[(base + i, other + i)] += bmj;
                }
            }
        }
    }
    let rhs = -DVector::from_column_slice(c.as_slice());
    let lu = l.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or(FluidError::SingularPencil { residual: f64::INFINITY, bound: 1e-10 * (1.0 + inf_norm(c)) })?;
    let r = &rhs - &l * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let x = DMatrix::from_column_slice(p, q, x.as_slice());

    let residual = sylvester_residual(a, b, c, &x);
    let bound = 1e-10 * (1.0 + inf_norm(c));
    if !(residual <= bound) {
        return Err(FluidError::SingularPencil { residual, bound });
    }
    Ok(x)
}
