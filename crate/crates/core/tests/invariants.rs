//! Structural invariants on random models across all drift regimes.

mod common;

use common::{censored, max_row_sum, random_model, row_sum_gap};
use fluidq::model::{classify, partition_phases, FluidModel, Regime};
use fluidq::numerics::{expm, group_inverse_of_singular, stationary_of};
use fluidq::passage::{drift_deviation, escape, transform_at, transform_continued, EscapeMode};
use fluidq::riccati::{solve, wiener_hopf_residuals, Algorithm, SolverOptions};
use fluidq::stationary::stationary_distribution;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const REGIMES: [Regime; 3] = [Regime::PositiveRecurrent, Regime::NullRecurrent, Regime::Transient];

/// Conditioning degrades like 1/min|cᵢ|; the absolute tolerances below
/// assume rates bounded away from zero.
const MIN_RATE: f64 = 0.05;

fn well_scaled(model: &FluidModel) -> bool {
    model.rates().iter().all(|c| c.abs() >= MIN_RATE)
}

fn model_strategy(max_m: usize) -> impl Strategy<Value = (Regime, FluidModel)> {
    (any::<u64>(), 2..=max_m, 0usize..3)
        .prop_map(|(seed, m, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (REGIMES[r], random_model(&mut rng, m, REGIMES[r]))
        })
        .prop_filter("a rate is near zero", |(_, model)| well_scaled(model))
}

/// Same population restricted to one regime.
fn regime_strategy(regime: Regime, max_m: usize) -> impl Strategy<Value = FluidModel> {
    (any::<u64>(), 2..=max_m)
        .prop_map(move |(seed, m)| random_model(&mut ChaCha8Rng::seed_from_u64(seed), m, regime))
        .prop_filter("a rate is near zero", well_scaled)
}

fn with_rates(model: &FluidModel, c: DVector<f64>) -> FluidModel {
    FluidModel::new(model.generator().clone(), c, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_and_censoring((_, model) in model_strategy(20)) {
        let p = partition_phases(&model);
        let mut all: Vec<usize> = p.up.iter().chain(&p.down).chain(&p.zero).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..model.dim()).collect::<Vec<_>>());
        for list in [&p.up, &p.down, &p.zero] {
            prop_assert!(list.windows(2).all(|w| w[0] < w[1]));
        }
        let cg = censored(&model);
        let a = cg.alpha();
        prop_assert!((a.sum() - 1.0).abs() <= 1e-12 && a.min() > 0.0);
        prop_assert!((a.transpose() * model.generator()).amax() <= 1e-10);
        prop_assert!(row_sum_gap(cg.t(), 0.0) <= 1e-10);
        let t = cg.t();
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                prop_assert!(i == j || t[(i, j)] >= 0.0);
            }
        }
        if p.zero.is_empty() {
            prop_assert_eq!(t, &p.permute_matrix(model.generator()));
        }
    }

    #[test]
    fn riccati_solution_laws((regime, model) in model_strategy(20)) {
        let cg = censored(&model);
        let s = solve(&cg, &SolverOptions::default()).unwrap();
        prop_assert_eq!(s.regime, regime);
        prop_assert!(s.residual <= 1e-10 && s.dual_residual <= 1e-10);
        prop_assert!(s.psi.min() > 0.0 && s.psi_hat.min() > 0.0);
        match regime {
            Regime::Transient => prop_assert!(max_row_sum(&s.psi) < 1.0 - 1e-6),
            _ => prop_assert!(row_sum_gap(&s.psi, 1.0) <= 1e-8),
        }
        match regime {
            Regime::PositiveRecurrent => prop_assert!(max_row_sum(&s.psi_hat) < 1.0 - 1e-6),
            _ => prop_assert!(row_sum_gap(&s.psi_hat, 1.0) <= 1e-8),
        }
        // U is a (sub)generator, conservative exactly when the drift is not positive.
        let u = &s.u;
        for i in 0..u.nrows() {
            for j in 0..u.ncols() {
                prop_assert!(i == j || u[(i, j)] >= -1e-12);
            }
        }
        if regime == Regime::Transient {
            // Rows of up phases with no direct way down stay conservative.
            prop_assert!(max_row_sum(u) <= 1e-10);
            prop_assert!(u.row_iter().any(|r| r.sum() < -1e-8));
        } else {
            prop_assert!(row_sum_gap(u, 0.0) <= 1e-8);
        }
        let wh = wiener_hopf_residuals(&s, &cg);
        prop_assert!(wh.res_u <= 1e-8 && wh.res_k <= 1e-8);
        // A defective zero eigenvalue at zero drift moves by about sqrt(ε‖C⁻¹T‖).
        let spread = wh.eigenvalues.iter().map(|z| z.norm()).fold(1.0, f64::max);
        prop_assert!(wh.spectrum_gap <= 1e-6 * spread);
        prop_assert!(wh.separation_ok);
        for x in [0.1, 1.0, 10.0] {
            prop_assert!(expm(&(&s.k * x)).min() >= -1e-12);
        }
    }

    /// Reversing every rate turns the reflected problem into the original one.
    #[test]
    fn reversing_rates_swaps_the_pair((_, model) in model_strategy(12)) {
        let flipped = with_rates(&model, -model.rates());
        let s = solve(&censored(&model), &SolverOptions::default()).unwrap();
        let f = solve(&censored(&flipped), &SolverOptions::default()).unwrap();
        prop_assert!((&s.psi - &f.psi_hat).amax() <= 1e-10);
        prop_assert!((&s.psi_hat - &f.psi).amax() <= 1e-10);
        prop_assert!((&s.u - &f.u_hat).amax() <= 1e-9);
    }

    #[test]
    fn functional_iteration_is_monotone_and_agrees(model in prop_oneof![
        regime_strategy(Regime::PositiveRecurrent, 12),
        regime_strategy(Regime::Transient, 12),
    ]) {
        let cg = censored(&model);
        let newton = solve(&cg, &SolverOptions::new(Algorithm::Newton)).unwrap();
        // A monotonicity violation would surface as an error here.
        let functional = solve(&cg, &SolverOptions::new(Algorithm::Functional)).unwrap();
        prop_assert!((&newton.psi - &functional.psi).amax() <= 1e-10);
        prop_assert!((&newton.psi_hat - &functional.psi_hat).amax() <= 1e-10);
        prop_assert!(newton.iterations < functional.iterations);
    }

    #[test]
    fn stationary_law_conserves_mass(model in regime_strategy(Regime::PositiveRecurrent, 12)) {
        let cg = censored(&model);
        let s = solve(&cg, &SolverOptions::default()).unwrap();
        let d = stationary_distribution(&cg, &s).unwrap();
        prop_assert!((d.limit() - cg.alpha()).amax() <= 1e-8);
        prop_assert!((d.limit().sum() - 1.0).abs() <= 1e-8);
        prop_assert!(d.rho.min() >= 0.0 && (d.rho.sum() - 1.0).abs() <= 1e-12);
        prop_assert!((d.rho.transpose() * s.h() - d.rho.transpose()).amax() <= 1e-10);
        prop_assert!((d.rho.dot(&d.mean_cycle) * d.norm_c - 1.0).abs() <= 1e-10);
        prop_assert!(d.mean_cycle.min() > 0.0);
        prop_assert!(d.boundary_mass.min() >= 0.0);
        for &i in &cg.partition().up {
            prop_assert_eq!(d.boundary_mass[i], 0.0);
        }
        // Slowest decay rate sets the grid so the tail is actually visited.
        let decay = -fluidq::numerics::sorted_eigenvalues(&s.k).last().unwrap().re;
        let x_max = 10.0 / decay.max(1e-3);
        let mut prev = d.cdf(0.0).unwrap();
        for k in 1..50 {
            let g = d.cdf(x_max * k as f64 / 49.0).unwrap();
            prop_assert!((&g - &prev).min() >= -1e-12);
            prev = g;
        }
        let x = 0.37 * x_max / 10.0;
        let fastest = fluidq::numerics::sorted_eigenvalues(&s.k).iter().map(|z| z.norm()).fold(1.0, f64::max);
        let h = 1e-4 / fastest;
        let fd = (d.cdf(x + h).unwrap() - d.cdf(x - h).unwrap()) / (2.0 * h);
        let dens = d.density(x).unwrap();
        prop_assert!((&fd - &dens).amax() <= 1e-5 * (1.0 + dens.amax()));
    }

    #[test]
    fn escape_rows_are_distributions((_, model) in model_strategy(12), a in 0.05f64..6.0, b in 0.05f64..6.0) {
        let cg = censored(&model);
        let s = solve(&cg, &SolverOptions::default()).unwrap();
        let comb = escape(&cg, &s, a, b).unwrap().combined();
        prop_assert!(row_sum_gap(&comb, 1.0) <= 1e-8);
        prop_assert!(comb.min() >= -1e-10);
    }

    #[test]
    fn transforms_decrease_in_s((_, model) in model_strategy(10)) {
        let cg = censored(&model);
        let opts = SolverOptions::default();
        let s = solve(&cg, &opts).unwrap();
        let mut prev = transform_at(&cg, 0.0, &opts).unwrap().h_s;
        prop_assert!((&prev - s.h()).amax() <= 1e-9);
        for s in [0.25, 0.5, 1.0, 2.0] {
            let h = transform_at(&cg, s, &opts).unwrap().h_s;
            prop_assert!((&prev - &h).min() >= -1e-12);
            prev = h;
        }
        prop_assert!(transform_at(&cg, 1e3, &opts).unwrap().h_s.max() <= 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// With positive drift and a very deep floor, upper exits from up phases
    /// are just first passages upward; dually for negative drift.
    #[test]
    fn one_sided_limits((regime, model) in model_strategy(8), x in 0.1f64..3.0) {
        prop_assume!(regime != Regime::NullRecurrent);
        let cg = censored(&model);
        let s = solve(&cg, &SolverOptions::default()).unwrap();
        let up = &cg.partition().up;
        let down = &cg.partition().down;
        if regime == Regime::Transient {
            let e = escape(&cg, &s, 200.0, x).unwrap();
            let got = DMatrix::from_fn(up.len(), up.len(), |i, j| e.upper[(up[i], j)]);
            prop_assert!((got - expm(&(&s.u_hat * x))).amax() <= 1e-6);
        } else {
            let e = escape(&cg, &s, x, 200.0).unwrap();
            let got = DMatrix::from_fn(down.len(), down.len(), |i, j| e.lower[(down[i], j)]);
            prop_assert!((got - expm(&(&s.u * x))).amax() <= 1e-6);
        }
    }

    /// Nudging a zero-drift model off criticality lands in the regular branch
    /// with nearly the same answer.
    #[test]
    fn escape_is_continuous_across_zero_drift(model in regime_strategy(Regime::NullRecurrent, 8), a in 0.2f64..3.0, b in 0.2f64..3.0) {
        let cg = censored(&model);
        let s = solve(&cg, &SolverOptions::default()).unwrap();
        let null = escape(&cg, &s, a, b).unwrap();
        prop_assert_eq!(null.mode, EscapeMode::NullRecurrent);
        for shift in [-1e-6, 1e-6] {
            let nudged = with_rates(&model, model.rates().add_scalar(shift));
            let cn = censored(&nudged);
            prop_assert_ne!(classify(&cn), Regime::NullRecurrent);
            let sn = solve(&cn, &SolverOptions::default()).unwrap();
            let e = escape(&cn, &sn, a, b).unwrap();
            prop_assert_eq!(e.mode, EscapeMode::Regular);
            prop_assert!((e.combined() - null.combined()).amax() <= 1e-3);
        }
    }

    /// The zero-drift answer does not depend on how the null vector is scaled.
    #[test]
    fn null_vector_scale_is_immaterial(model in regime_strategy(Regime::NullRecurrent, 8), scale in 0.01f64..100.0) {
        let cg = censored(&model);
        let s = solve(&cg, &SolverOptions::default()).unwrap();
        let e = escape(&cg, &s, 1.0, 1.5).unwrap();
        let aux = e.aux.as_ref().unwrap();
        let n = e.p_matrix.nrows();
        let gi = group_inverse_of_singular(&(DMatrix::<f64>::identity(n, n) + &e.p_matrix)).unwrap();
        let base = &e.u_matrix * &gi.sharp;
        let eta = &aux.eta * scale;
        let w = (&aux.h - &base * &aux.beta) / eta.dot(&aux.beta);
        let central = base + w * eta.transpose();
        prop_assert!((central - &e.central).amax() <= 1e-9);
        prop_assert!(aux.eta_residual <= 1e-9);
        prop_assert!(cg.alpha().dot(&aux.h_full).abs() <= 1e-9);
    }

    /// For negative drift, the drift-deviation vector satisfies
    /// `h₊ − Ψh₋ = −μ·E[return time]` (optional stopping for X(t) − μt + h(φ)).
    #[test]
    fn deviation_identity_with_return_time(model in regime_strategy(Regime::PositiveRecurrent, 8)) {
        let cg = censored(&model);
        let opts = SolverOptions::default();
        let s = solve(&cg, &opts).unwrap();
        let h = cg.partition().permute_vector(&drift_deviation(&cg).unwrap());
        let (p, q) = (cg.m_up(), cg.m_down());
        let gap = h.rows(0, p) - &s.psi * h.rows(p, q);
        let step = 1e-5;
        let ones = DVector::from_element(q, 1.0);
        let plus = transform_continued(&cg, step, &opts).unwrap().psi_s * &ones;
        let minus = transform_continued(&cg, -step, &opts).unwrap().psi_s * &ones;
        let mean_return = -(plus - minus) / (2.0 * step);
        let predicted = mean_return * -cg.drift();
        prop_assert!((gap - &predicted).amax() <= 1e-5 * (1.0 + predicted.amax()));
    }
}

#[test]
fn deviation_identity_on_the_two_state_fixtures() {
    // Negative drift: h = (4/9, -2/9), Ψ = 1, mean return time 2, -μ = 1/3.
    let cg = censored(&common::fixture("two_state_recurrent.json"));
    let h = drift_deviation(&cg).unwrap();
    assert!((h - DVector::from_vec(vec![4.0 / 9.0, -2.0 / 9.0])).amax() <= 1e-14);
    // Zero drift: h = (1/2, -1/2) with Ψ = 1, so h₊ − Ψh₋ = 1, not 0.
    let cg = censored(&common::fixture("two_state_null.json"));
    let h = drift_deviation(&cg).unwrap();
    assert!((h - DVector::from_vec(vec![0.5, -0.5])).amax() <= 1e-14);
    assert!(stationary_of(&DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).is_ok());
}
