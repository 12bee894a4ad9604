use nalgebra::DMatrix;

use super::one_norm;

// Padé [13/13] numerator coefficients and the norm bound under which the
// unscaled approximant is accurate to double precision.
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a fixed [13/13] Padé
/// approximant; the number of squarings comes from `‖M‖₁`.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(m);
    if norm == 0.0 {
        return DMatrix::identity(n, n);
    }
    let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil().max(0.0) as i32 } else { 0 };
    let a = m * 2f64.powi(-squarings);

    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B13[13] + &a4 * B13[11] + &a2 * B13[9])
        + &a6 * B13[7]
        + &a4 * B13[5]
        + &a2 * B13[3]
        + &id * B13[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B13[12] + &a4 * B13[10] + &a2 * B13[8])
        + &a6 * B13[6]
        + &a4 * B13[4]
        + &a2 * B13[2]
        + &id * B13[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}
