use nalgebra::DMatrix;

use super::{expm, GroupInverseResult};
use crate::error::{FluidError, Result};

/// `F(K, x) = ∫₀ˣ e^{Ku} du`.
///
/// Uses `(−K⁻¹)(I − e^{Kx})` when `K` is nonsingular and
/// `(−K#)(I − e^{Kx}) + x·v·uᵀ` when it has a zero eigenvalue.
pub fn integral_f(k: &DMatrix<f64>, x: f64, gi: &GroupInverseResult) -> Result<DMatrix<f64>> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(FluidError::InvalidArgument(format!("F(K, x) needs finite x >= 0, got {x}")));
    }
    let n = k.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let decay = &id - expm(&(k * x));
    let mut f = -&gi.sharp * decay;
    if let (Some(u), Some(v)) = (&gi.left_null, &gi.right_null) {
        f += v * u.transpose() * x;
    }
    Ok(f)
}
