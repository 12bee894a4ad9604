//! Dense linear-algebra kernels.

mod expm;
mod group_inverse;
mod integral;
mod stationary;
mod sylvester;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub use expm::expm;
pub use group_inverse::{group_inverse, group_inverse_of_singular, GroupInverseResult};
pub use integral::integral_f;
pub use stationary::stationary_of;
pub use sylvester::{solve_sylvester, sylvester_residual};

/// Maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Eigenvalues ordered by real part, ties broken by imaginary part.
pub fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = a.clone().complex_eigenvalues().iter().map(|z| Complex64::new(z.re, z.im)).collect();
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    ev
}

/// Largest distance in a greedy nearest-neighbour matching between two
/// eigenvalue multisets of the same size.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("multisets of equal size");
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

/// Horizontal concatenation of blocks that share a row count.
pub(crate) fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows);
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// 2×2 block matrix `[[a, b], [c, d]]`.
pub(crate) fn block2(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), a.ncols());
    let (r, s) = (d.nrows(), d.ncols());
    assert_eq!(b.shape(), (p, s));
    assert_eq!(c.shape(), (r, q));
    let mut out = DMatrix::zeros(p + r, q + s);
    out.view_mut((0, 0), (p, q)).copy_from(a);
    out.view_mut((0, q), (p, s)).copy_from(b);
    out.view_mut((p, 0), (r, q)).copy_from(c);
    out.view_mut((p, q), (r, s)).copy_from(d);
    out
}

/// Scales the rows of `a` by the reciprocals of `d`.
pub(crate) fn div_rows(a: &DMatrix<f64>, d: &nalgebra::DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / d[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0]);
        assert_eq!(inf_norm(&a), 7.0);
        assert_eq!(one_norm(&a), 6.0);
    }

    #[test]
    fn eigenvalues_sorted_by_real_part() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 1.0, -1.0]);
        let ev = sorted_eigenvalues(&a);
        assert!((ev[0].re + 3.0).abs() < 1e-12 && ev[1].re.abs() < 1e-12);
    }

    #[test]
    fn spectrum_distance_ignores_order() {
        let a = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 2.0)];
        let b = [Complex64::new(-1.0, 2.0), Complex64::new(1.0, 1e-9)];
        assert!(spectrum_distance(&a, &b) < 2e-9);
    }
}
