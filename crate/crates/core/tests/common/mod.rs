#![allow(dead_code)]

use std::path::PathBuf;

use fluidq::model::{censor, partition_phases, CensoredGenerator, FluidModel, Regime};
use fluidq::numerics::stationary_of;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> FluidModel {
    FluidModel::from_path(fixture_path(name)).unwrap()
}

pub fn censored(model: &FluidModel) -> CensoredGenerator {
    censor(model, &partition_phases(model)).unwrap()
}

pub fn two_state(q1: f64, q2: f64, c1: f64, c2: f64) -> FluidModel {
    FluidModel::new(DMatrix::from_row_slice(2, 2, &[-q1, q1, q2, -q2]), DVector::from_vec(vec![c1, c2]), None).unwrap()
}

/// Random irreducible model with mixed-sign rates. The rates are shifted so
/// the drift lands at -0.3, 0 (up to rounding) or +0.3 for the requested
/// regime; about 30% of off-diagonal rates are zero.
pub fn random_model(rng: &mut ChaCha8Rng, m: usize, regime: Regime) -> FluidModel {
    let shift = match regime {
        Regime::PositiveRecurrent => -0.3,
        Regime::NullRecurrent => 0.0,
        Regime::Transient => 0.3,
    };
    loop {
        let mut rate = |i: usize, j: usize| {
            if i != j && rng.random::<f64>() < 0.7 {
                rng.random_range(0.1..2.0)
            } else {
                0.0
            }
        };
        let mut q = DMatrix::from_fn(m, m, |i, j| rate(i, j));
        for i in 0..m {
            let s: f64 = q.row(i).sum();
            q[(i, i)] = -s;
        }
        let mut c = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let Ok(alpha) = stationary_of(&q) else { continue };
        c.add_scalar_mut(-alpha.dot(&c) + shift);
        if !(c.iter().any(|&x| x > 0.0) && c.iter().any(|&x| x < 0.0)) {
            continue;
        }
        if let Ok(model) = FluidModel::new(q, c, None) {
            return model;
        }
    }
}

/// The 200-model population: sizes uniform on 2..=20, regimes cycling.
pub fn population(seed: u64, count: usize) -> Vec<(Regime, FluidModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regimes = [Regime::PositiveRecurrent, Regime::NullRecurrent, Regime::Transient];
    (0..count)
        .map(|k| {
            let m = rng.random_range(2..=20);
            let r = regimes[k % 3];
            (r, random_model(&mut rng, m, r))
        })
        .collect()
}

pub fn row_sum_gap(a: &DMatrix<f64>, target: f64) -> f64 {
    a.row_iter().map(|r| (r.sum() - target).abs()).fold(0.0, f64::max)
}

pub fn max_row_sum(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.sum()).fold(f64::NEG_INFINITY, f64::max)
}
