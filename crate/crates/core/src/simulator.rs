//! Event-driven Monte Carlo for fluid queues.
//!
//! The level moves linearly between phase jumps, so every quantity here is
//! computed from closed-form motion; the only error is statistical.
//!
//! Random streams: ChaCha8 seeded with `seed_from_u64(seed)`, one stream per
//! replication selected with `set_stream(id)`, where
//! `id = (target << 56) | (start_phase << 40) | replication`. Replications
//! are independent of scheduling, so results are bit-identical across runs
//! and thread counts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{FluidError, Result};
use crate::model::{partition_phases, FluidModel};

/// Default level at which a first-return path is declared non-returning.
pub const DEFAULT_LEVEL_CAP: f64 = 1e4;

/// Number of batches for batch-means standard errors along a single path.
pub const PATH_BATCHES: usize = 64;

/// Normal quantile for 95% two-sided intervals.
const Z95: f64 = 1.96;

const TARGET_PSI: u64 = 1;
const TARGET_ESCAPE: u64 = 2;
const TARGET_PATH: u64 = 3;

fn stream_id(target: u64, phase: usize, replication: usize) -> u64 {
    (target << 56) | ((phase as u64) << 40) | replication as u64
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Empirical estimate with 95% normal-approximation half-widths.
#[derive(Debug, Clone)]
pub struct SimulationEstimate {
    pub value: DMatrix<f64>,
    pub half_width: DMatrix<f64>,
    /// `half_width / 1.96`.
    pub std_error: DMatrix<f64>,
    /// Replications per row, or batches for path estimates.
    pub samples: usize,
    pub seed: u64,
    /// Replications stopped at the level cap (first-return estimates only).
    pub censored: usize,
}

impl SimulationEstimate {
    fn from_counts(counts: DMatrix<f64>, n: usize, seed: u64, censored: usize) -> Self {
        let value = counts / n as f64;
        let std_error = value.map(|p| (p * (1.0 - p) / n as f64).max(0.0).sqrt());
        SimulationEstimate { half_width: &std_error * Z95, value, std_error, samples: n, seed, censored }
    }

    /// Largest `|value − reference| / std_error`; zero gaps with zero error count as 0.
    pub fn max_z(&self, reference: &DMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for ((v, r), s) in self.value.iter().zip(reference.iter()).zip(self.std_error.iter()) {
            let gap = (v - r).abs();
            let z = if gap == 0.0 {
                0.0
            } else if *s == 0.0 {
                f64::INFINITY
            } else {
                gap / s
            };
            worst = worst.max(z);
        }
        worst
    }
}

/// Phase jump sampler built from the generator.
struct PhaseChain {
    holding: Vec<Exp<f64>>,
    /// Cumulative jump probabilities per row; the diagonal contributes 0.
    cumulative: Vec<Vec<f64>>,
    rates: Vec<f64>,
}

impl PhaseChain {
    fn new(model: &FluidModel) -> Self {
        let q = model.generator();
        let m = model.dim();
        let mut holding = Vec::with_capacity(m);
        let mut cumulative = Vec::with_capacity(m);
        for i in 0..m {
            let out = -q[(i, i)];
            holding.push(Exp::new(out).expect("irreducible generator has positive exit rates"));
            let mut acc = 0.0;
            let row = (0..m)
                .map(|j| {
                    if j != i {
                        acc += q[(i, j)] / out;
                    }
                    acc
                })
                .collect();
            cumulative.push(row);
        }
        PhaseChain { holding, cumulative, rates: model.rates().iter().copied().collect() }
    }

    fn cumulative_gap(&self, phase: usize, j: usize) -> f64 {
        let row = &self.cumulative[phase];
        row[j] - if j == 0 { 0.0 } else { row[j - 1] }
    }

    fn sojourn<R: Rng>(&self, phase: usize, rng: &mut R) -> f64 {
        self.holding[phase].sample(rng)
    }

    fn jump<R: Rng>(&self, phase: usize, rng: &mut R) -> usize {
        let row = &self.cumulative[phase];
        let u: f64 = rng.random::<f64>() * row[row.len() - 1];
        match row.iter().enumerate().position(|(j, &c)| j != phase && u < c) {
            Some(j) => j,
            // u rounded onto the total: take the last reachable phase
            None => (0..row.len()).rev().find(|&j| j != phase && self.cumulative_gap(phase, j) > 0.0).unwrap_or(phase),
        }
    }
}

/// Time accumulators of the regulated process along one path.
#[derive(Debug, Clone)]
pub struct PathSummary {
    pub horizon: f64,
    pub grid: Vec<f64>,
    /// Time in each phase.
    pub phase_time: DVector<f64>,
    /// Time at level 0 in each phase.
    pub zero_time: DVector<f64>,
    /// `below[(k, i)]`: time with level ≤ `grid[k]` in phase `i`.
    pub below: DMatrix<f64>,
    pub events: usize,
    /// Fraction of time at level 0 by phase (1×m).
    pub boundary_mass: SimulationEstimate,
    /// Fraction of time in each phase (1×m).
    pub phase_fraction: SimulationEstimate,
    /// Empirical `P[Y ≤ grid[k], φ = i]` (grid × m).
    pub cdf: SimulationEstimate,
}

#[derive(Clone)]
struct Accumulators {
    phase: Vec<CompensatedSum>,
    zero: Vec<CompensatedSum>,
    below: Vec<Vec<CompensatedSum>>,
}

impl Accumulators {
    fn new(m: usize, points: usize) -> Self {
        Accumulators {
            phase: vec![CompensatedSum::default(); m],
            zero: vec![CompensatedSum::default(); m],
            below: vec![vec![CompensatedSum::default(); m]; points],
        }
    }

    /// Records a stretch of length `dt` in `phase`, starting at level `y0`
    /// and moving at `rate`, regulated at 0.
    fn record(&mut self, grid: &[f64], phase: usize, y0: f64, rate: f64, dt: f64) {
        self.phase[phase].add(dt);
        let (moving, at_zero) = if rate < 0.0 {
            let t0 = (y0 / -rate).min(dt);
            (t0, dt - t0)
        } else if rate == 0.0 && y0 == 0.0 {
            (0.0, dt)
        } else {
            (dt, 0.0)
        };
        if at_zero > 0.0 {
            self.zero[phase].add(at_zero);
        }
        for (k, &x) in grid.iter().enumerate() {
            let t = at_zero + time_below(x, y0, rate, moving);
            if t > 0.0 {
                self.below[k][phase].add(t);
            }
        }
    }
}

/// Time within `[0, dt]` that `y0 + rate·t` spends at or below `x`.
fn time_below(x: f64, y0: f64, rate: f64, dt: f64) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    if rate > 0.0 {
        ((x - y0) / rate).clamp(0.0, dt)
    } else if rate < 0.0 {
        (dt - (y0 - x) / -rate).clamp(0.0, dt)
    } else if y0 <= x {
        dt
    } else {
        0.0
    }
}

/// Simulates the regulated process from level 0 in the first down phase up to
/// `horizon`, recording time fractions on `grid`.
pub fn simulate_path(model: &FluidModel, horizon: f64, seed: u64, grid: &[f64]) -> Result<PathSummary> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(FluidError::InvalidArgument(format!("horizon must be finite and positive, got {horizon}")));
    }
    if grid.iter().any(|&x| !(x >= 0.0)) {
        return Err(FluidError::InvalidArgument("grid points must be nonnegative".into()));
    }
    let m = model.dim();
    let chain = PhaseChain::new(model);
    let mut rng = rng_for(seed, stream_id(TARGET_PATH, 0, 0));
    let batch_len = horizon / PATH_BATCHES as f64;
    let mut batches: Vec<Accumulators> = Vec::with_capacity(PATH_BATCHES);
    let mut current = Accumulators::new(m, grid.len());
    let mut batch_end = batch_len;

    let partition = partition_phases(model);
    let mut phase = partition.down.first().copied().unwrap_or(0);
    let mut level = 0.0f64;
    let mut t = 0.0f64;
    let mut events = 0usize;

    while t < horizon {
        let mut remaining = chain.sojourn(phase, &mut rng).min(horizon - t);
        let rate = chain.rates[phase];
        while remaining > 0.0 {
            let piece = remaining.min(batch_end - t);
            current.record(grid, phase, level, rate, piece);
            level = (level + rate * piece).max(0.0);
            t += piece;
            remaining -= piece;
            if t >= batch_end && batches.len() + 1 < PATH_BATCHES {
                batches.push(std::mem::replace(&mut current, Accumulators::new(m, grid.len())));
                batch_end = if batches.len() + 1 == PATH_BATCHES {
                    f64::INFINITY
                } else {
                    batch_len * (batches.len() + 1) as f64
                };
            }
        }
        if t < horizon {
            phase = chain.jump(phase, &mut rng);
            events += 1;
        }
    }
    batches.push(current);

    let total = |f: &dyn Fn(&Accumulators) -> f64| -> f64 {
        let mut s = CompensatedSum::default();
        batches.iter().for_each(|b| s.add(f(b)));
        s.value()
    };
    let phase_time = DVector::from_fn(m, |i, _| total(&|b| b.phase[i].value()));
    let zero_time = DVector::from_fn(m, |i, _| total(&|b| b.zero[i].value()));
    let below = DMatrix::from_fn(grid.len(), m, |k, i| total(&|b| b.below[k][i].value()));

    let batch_estimate = |rows: usize, f: &dyn Fn(&Accumulators, usize, usize) -> f64, totals: &DMatrix<f64>| {
        let n = batches.len();
        let value = totals / horizon;
        let std_error = DMatrix::from_fn(rows, m, |k, i| {
            let fractions: Vec<f64> =
                batches.iter().map(|b| f(b, k, i) / b.phase.iter().map(|s| s.value()).sum::<f64>()).collect();
            let mean = fractions.iter().sum::<f64>() / n as f64;
            let var = fractions.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
            (var / n as f64).sqrt()
        });
        SimulationEstimate { half_width: &std_error * Z95, value, std_error, samples: n, seed, censored: 0 }
    };
    let boundary_mass =
        batch_estimate(1, &|b, _, i| b.zero[i].value(), &DMatrix::from_row_slice(1, m, zero_time.as_slice()));
    let phase_fraction =
        batch_estimate(1, &|b, _, i| b.phase[i].value(), &DMatrix::from_row_slice(1, m, phase_time.as_slice()));
    let cdf = batch_estimate(grid.len(), &|b, k, i| b.below[k][i].value(), &below);

    Ok(PathSummary {
        horizon,
        grid: grid.to_vec(),
        phase_time,
        zero_time,
        below,
        events,
        boundary_mass,
        phase_fraction,
        cdf,
    })
}

enum Outcome {
    Exit(usize),
    Censored,
}

/// Estimates `Ψ` (m₊×m₋; rows and columns in partition order) from the free
/// process started at level 0 in each up phase. Paths reaching `level_cap`
/// are counted as non-returning and reported in `censored`.
pub fn estimate_psi(model: &FluidModel, replications: usize, seed: u64, level_cap: f64) -> Result<SimulationEstimate> {
    if replications == 0 {
        return Err(FluidError::InvalidArgument("replications must be at least 1".into()));
    }
    if !(level_cap > 0.0) {
        return Err(FluidError::InvalidArgument(format!("level cap must be positive, got {level_cap}")));
    }
    let partition = partition_phases(model);
    if partition.up.is_empty() || partition.down.is_empty() {
        return Err(FluidError::OneDirectional("first return needs both up and down phases"));
    }
    let chain = PhaseChain::new(model);
    let (mu, md) = (partition.m_up(), partition.m_down());
    let mut counts = DMatrix::zeros(mu, md);
    let mut censored = 0;
    for (row, &start) in partition.up.iter().enumerate() {
        let outcomes: Vec<Outcome> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let mut rng = rng_for(seed, stream_id(TARGET_PSI, start, rep));
                first_return(&chain, start, level_cap, &mut rng)
            })
            .collect();
        for o in outcomes {
            match o {
                Outcome::Exit(j) => counts[(row, partition.position[j] - mu)] += 1.0,
                Outcome::Censored => censored += 1,
            }
        }
    }
    Ok(SimulationEstimate::from_counts(counts, replications, seed, censored))
}

fn first_return<R: Rng>(chain: &PhaseChain, start: usize, cap: f64, rng: &mut R) -> Outcome {
    let mut phase = start;
    let mut level = 0.0f64;
    loop {
        let dt = chain.sojourn(phase, rng);
        let rate = chain.rates[phase];
        let next = level + rate * dt;
        if rate < 0.0 && next <= 0.0 {
            return Outcome::Exit(phase);
        }
        if next >= cap {
            return Outcome::Censored;
        }
        level = next;
        phase = chain.jump(phase, rng);
    }
}

/// Estimates the phase distribution at first exit from `(−a, b)` for the
/// free process started at level 0 in every phase. Rows follow original
/// phase order; columns are the up phases then the down phases.
pub fn estimate_escape(
    model: &FluidModel,
    a: f64,
    b: f64,
    replications: usize,
    seed: u64,
) -> Result<SimulationEstimate> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(FluidError::InvalidArgument(format!("escape needs finite a, b > 0, got a = {a}, b = {b}")));
    }
    if replications == 0 {
        return Err(FluidError::InvalidArgument("replications must be at least 1".into()));
    }
    let partition = partition_phases(model);
    let chain = PhaseChain::new(model);
    let m = model.dim();
    let moving = partition.m_up() + partition.m_down();
    let mut counts = DMatrix::zeros(m, moving);
    for start in 0..m {
        let exits: Vec<usize> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let mut rng = rng_for(seed, stream_id(TARGET_ESCAPE, start, rep));
                first_exit(&chain, start, a, b, &mut rng)
            })
            .collect();
        for j in exits {
            counts[(start, partition.position[j])] += 1.0;
        }
    }
    Ok(SimulationEstimate::from_counts(counts, replications, seed, 0))
}

fn first_exit<R: Rng>(chain: &PhaseChain, start: usize, a: f64, b: f64, rng: &mut R) -> usize {
    let mut phase = start;
    let mut level = 0.0f64;
    loop {
        let dt = chain.sojourn(phase, rng);
        let rate = chain.rates[phase];
        level += rate * dt;
        if level >= b || level <= -a {
            return phase;
        }
        phase = chain.jump(phase, rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(q: &[f64], c: &[f64]) -> FluidModel {
        let m = c.len();
        FluidModel::new(DMatrix::from_row_slice(m, m, q), DVector::from_column_slice(c), None).unwrap()
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..10 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 10.0);
    }

    #[test]
    fn time_below_cases() {
        assert_eq!(time_below(1.0, 0.0, 2.0, 1.0), 0.5);
        assert_eq!(time_below(1.0, 2.0, -1.0, 3.0), 2.0);
        assert_eq!(time_below(1.0, 0.5, 0.0, 3.0), 3.0);
        assert_eq!(time_below(0.0, 0.5, 0.0, 3.0), 0.0);
    }

    #[test]
    fn short_path_conserves_time() {
        let m = model(&[-2.0, 2.0, 1.0, -1.0], &[1.0, -1.0]);
        let p = simulate_path(&m, 0.3, 7, &[0.0, 0.1, 10.0]).unwrap();
        assert!((p.phase_time.sum() - 0.3).abs() < 1e-15);
        assert!((p.below.row(2).sum() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn estimates_are_reproducible() {
        let m = model(&[-1.0, 1.0, 2.0, -2.0], &[1.0, -1.0]);
        let x = estimate_psi(&m, 500, 11, 50.0).unwrap();
        let y = estimate_psi(&m, 500, 11, 50.0).unwrap();
        assert_eq!(x.value, y.value);
        let z = estimate_psi(&m, 500, 12, 50.0).unwrap();
        assert_ne!(x.value, z.value);
    }

    #[test]
    fn escape_rows_are_distributions() {
        let m = model(&[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0], &[1.0, -1.0, 0.0]);
        let e = estimate_escape(&m, 1.0, 1.0, 200, 3).unwrap();
        for i in 0..3 {
            assert!((e.value.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}
