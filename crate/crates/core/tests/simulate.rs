use std::f64::consts::TAU;
use std::sync::OnceLock;

use proptest::prelude::*;
use rds_core::criterion::thresholds;
use rds_core::model::Model;
use rds_core::noise::NoiseStream;
use rds_core::phase_space::{classify, CircleMap, Harmonic, PsiSpec, Region, SystemParams};
use rds_core::simulate::*;

const A_STAR: f64 = 0.928_816_357_662_228_6;

fn desk() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| Model::new(SystemParams::desk(), PsiSpec::desk(), 1_000_000).unwrap())
}

fn map_with(a: f64) -> CircleMap {
    let mut p = SystemParams::desk();
    p.a = a;
    CircleMap::new(&p, &PsiSpec::desk())
}

fn measure(bins: usize, counts: Vec<u64>) -> EmpiricalMeasure {
    let total = counts.iter().sum();
    EmpiricalMeasure { bins, counts, total }
}

#[test]
fn one_noiseless_step_from_zero() {
    let mut s = NoiseStream::new(1);
    let st = run_chain(&map_with(0.3), 0.0, &mut s, 0.0, 1).unwrap();
    assert!((st.x - 0.3).abs() < 1e-15);
    // ln(4000 / 2π)
    assert!((st.logderiv_sum - 6.456_172_573_7).abs() < 1e-9);
    assert!(!st.zero_derivative_hit());
}

#[test]
fn critical_start_flags_zero_derivative() {
    let mut s = NoiseStream::new(1);
    let st = run_chain(&map_with(A_STAR), 0.0, &mut s, 0.25, 2).unwrap();
    assert_eq!(st.zero_derivative_at, Some(0));
    assert_eq!(st.logderiv_sum, f64::NEG_INFINITY);
}

#[test]
fn chain_rejects_zero_steps() {
    let mut s = NoiseStream::new(1);
    assert!(matches!(run_chain(&map_with(0.3), 0.0, &mut s, 0.0, 0), Err(SimulateError::InvalidInput(_))));
}

#[test]
fn chains_are_bitwise_reproducible() {
    let m = &desk().map;
    let eps = desk().params.epsilon;
    let a = run_chain(m, eps, &mut NoiseStream::new(42), 0.1, 5000).unwrap();
    let b = run_chain(m, eps, &mut NoiseStream::new(42), 0.1, 5000).unwrap();
    assert_eq!(a.x.to_bits(), b.x.to_bits());
    assert_eq!(a.logderiv_sum.to_bits(), b.logderiv_sum.to_bits());
}

#[test]
fn trajectory_sink_writes_every_state() {
    let m = &desk().map;
    let mut buf = Vec::new();
    let mut sink = BinaryTrajectory(&mut buf);
    let opts = ChainOptions { trace: None, sink: Some(&mut sink) };
    let st = run_chain_with(m, 1e-3, &mut NoiseStream::new(3), 0.1, 10, opts).unwrap();
    assert_eq!(buf.len(), 11 * 8);
    let last = f64::from_le_bytes(buf[80..88].try_into().unwrap());
    assert_eq!(last.to_bits(), st.x.to_bits());
    assert_eq!(f64::from_le_bytes(buf[0..8].try_into().unwrap()), 0.1);
}

#[test]
fn region_trace_keeps_the_last_window() {
    let model = desk();
    let opts = ChainOptions { trace: Some((&model.partition, 4)), sink: None };
    let st = run_chain_with(&model.map, 1e-3, &mut NoiseStream::new(3), 0.1, 50, opts).unwrap();
    assert_eq!(st.region_trace.unwrap().len(), 4);
}

#[test]
fn desk_lyapunov_is_above_the_theorem_rate() {
    let model = desk();
    let est = lyapunov_estimate(&model.map, model.params.epsilon, &NoiseStream::new(7), 0.1, DEFAULT_BURN, 100_000, 4)
        .unwrap();
    assert_eq!(est.excluded, 0);
    assert_eq!(est.blocks, 400);
    assert!(est.mean > thresholds(&model.params).lambda0_ln_l, "{est:?}");
    assert!(est.std_error.is_finite() && est.std_error > 0.0);
}

#[test]
fn lyapunov_on_the_sink_orbit_is_excluded() {
    let est = lyapunov_estimate(&map_with(A_STAR), 0.0, &NoiseStream::new(7), 0.25, 0, MIN_LYAPUNOV_STEPS, 3).unwrap();
    assert_eq!(est.excluded, 3);
    assert_eq!(est.mean, f64::NEG_INFINITY);
}

#[test]
fn lyapunov_rejects_short_runs() {
    let r = lyapunov_estimate(&desk().map, 1e-3, &NoiseStream::new(7), 0.1, 0, MIN_LYAPUNOV_STEPS - 1, 1);
    assert!(matches!(r, Err(SimulateError::InvalidInput(_))));
}

#[test]
fn disjoint_seeds_agree_within_error() {
    let model = desk();
    let eps = model.params.epsilon;
    let a = lyapunov_estimate(&model.map, eps, &NoiseStream::new(1), 0.1, DEFAULT_BURN, 50_000, 4).unwrap();
    let b = lyapunov_estimate(&model.map, eps, &NoiseStream::new(2), 0.1, DEFAULT_BURN, 50_000, 4).unwrap();
    let se = a.std_error.hypot(b.std_error);
    assert!((a.mean - b.mean).abs() <= 3.0 * se, "{} vs {} (se {se})", a.mean, b.mean);
}

#[test]
fn tv_distance_known_values() {
    let u = measure(10, vec![1; 10]);
    assert_eq!(tv_distance(&u, &u).unwrap(), 0.0);
    let mut left = vec![0; 10];
    left[0] = 5;
    let mut right = vec![0; 10];
    right[9] = 5;
    assert_eq!(tv_distance(&measure(10, left.clone()), &measure(10, right)).unwrap(), 1.0);
    let mut half = vec![0; 10];
    half[0] = 1;
    half[1] = 1;
    assert!((tv_distance(&measure(10, half), &measure(10, left)).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn tv_distance_rejects_mismatch_and_empty() {
    let a = measure(10, vec![1; 10]);
    assert!(matches!(tv_distance(&a, &measure(20, vec![1; 20])), Err(SimulateError::BinMismatch(10, 20))));
    let z = measure(10, vec![0; 10]);
    assert!(tv_distance(&a, &z).is_err());
}

#[test]
fn large_noise_fills_every_bin() {
    let mut s = NoiseStream::new(5);
    let m = empirical_measure(&desk().map, 0.5, &mut s, 0.1, 1000, 1_000_000, 100).unwrap();
    assert_eq!(m.occupied(), 100);
    assert_eq!(m.total, 1_000_000);
}

#[test]
fn empty_measure_and_small_bins() {
    let mut s = NoiseStream::new(5);
    let m = empirical_measure(&desk().map, 0.1, &mut s, 0.1, 0, 0, 10).unwrap();
    assert_eq!(m.total, 0);
    assert!(m.counts.iter().all(|&c| c == 0));
    assert!(empirical_measure(&desk().map, 0.1, &mut s, 0.1, 0, 10, 9).is_err());
}

#[test]
fn sink_parameter_concentrates_the_measure() {
    let mut s = NoiseStream::new(5);
    let m = empirical_measure(&map_with(A_STAR), 1e-14, &mut s, 0.25, 100, 100_000, 100).unwrap();
    assert!(m.occupied() <= 2, "{}", m.occupied());
}

#[test]
fn noiseless_ledger_outside_deep_region_is_all_free() {
    let model = desk();
    let mut p = model.params;
    p.epsilon = 0.0;
    let m0 = Model::with_constants(p, model.psi.clone(), model.constants.clone()).unwrap();
    let n = 3;
    let mut x = 0.0;
    for _ in 0..n {
        assert_ne!(classify(&m0.partition, x, 0.0), Region::B(1));
        x = m0.map.eval(x, 0.0).circle;
    }
    let led = exponent_ledger(&m0, &mut NoiseStream::new(1), 0.0, n).unwrap();
    assert!(led.deep_terms.is_empty() && led.bound_sums.is_empty());
    assert_eq!(led.free_sum, led.logderiv_sum);
}

#[test]
fn ledger_conserves_the_chain_sum() {
    let model = desk();
    let n = 20_000;
    let led = exponent_ledger(model, &mut NoiseStream::new(11), 0.1, n).unwrap();
    let chain = run_chain(&model.map, model.params.epsilon, &mut NoiseStream::new(11), 0.1, n).unwrap();
    assert_eq!(led.logderiv_sum.to_bits(), chain.logderiv_sum.to_bits());
    assert!(led.relative_gap() <= 1e-9, "{}", led.relative_gap());
    assert!(!led.deep_terms.is_empty());
    let later = led.later_deep();
    let mean = later.iter().map(|d| d.term).sum::<f64>() / later.len() as f64;
    assert!(mean >= -15.1, "{mean}");
}

#[test]
fn ledger_requires_a_deep_level() {
    let model = desk();
    let mut p = model.params;
    p.k = 0;
    let m0 = Model::with_constants(p, model.psi.clone(), model.constants.clone()).unwrap();
    assert!(exponent_ledger(&m0, &mut NoiseStream::new(1), 0.1, 10).is_err());
}

#[test]
fn batch_exponents_are_positive_without_noise() {
    let starts: Vec<f64> = (0..8).map(|i| 0.05 + 0.11 * i as f64).collect();
    let out = finite_time_exponent_batch(&desk().map, 0.0, &NoiseStream::new(2), &starts, 2000).unwrap();
    assert_eq!(out.len(), 8);
    assert!(out.iter().all(|&e| e > 0.0), "{out:?}");
    assert!(finite_time_exponent_batch(&desk().map, 0.0, &NoiseStream::new(2), &starts, 999).is_err());
}

#[test]
fn batch_matches_single_chains() {
    let m = &desk().map;
    let root = NoiseStream::new(9);
    let out = finite_time_exponent_batch(m, 1e-3, &root, &[0.1, 0.2], 1000).unwrap();
    let single = run_chain(m, 1e-3, &mut root.substream(1), 0.2, 1000).unwrap();
    assert_eq!(out[1].to_bits(), (single.logderiv_sum / 1000.0).to_bits());
}

#[test]
fn cesaro_means_settle() {
    let model = desk();
    let eps = model.params.epsilon;
    let n1 = lyapunov_estimate(&model.map, eps, &NoiseStream::new(4), 0.1, DEFAULT_BURN, 20_000, 4).unwrap();
    let n2 = lyapunov_estimate(&model.map, eps, &NoiseStream::new(4), 0.1, DEFAULT_BURN, 80_000, 4).unwrap();
    assert!((n1.mean - n2.mean).abs() <= 5.0 * n1.std_error.hypot(n2.std_error));
}

#[test]
fn neumaier_sum_recovers_cancellation() {
    let mut s = NeumaierSum::default();
    for x in [1.0, 1e100, 1.0, -1e100] {
        s.add(x);
    }
    assert_eq!(s.value(), 2.0);
}

/// `ψ(· + s)` with offset `a − s` is conjugate to the desk map by `x ↦ x − s`.
fn shifted_map(s: f64, a: f64) -> CircleMap {
    let amp = 1.0 / (TAU * TAU);
    let psi = PsiSpec::new(vec![Harmonic { j: 1, cos_amp: amp * (TAU * s).sin(), sin_amp: amp * (TAU * s).cos() }]);
    let mut p = SystemParams::desk();
    p.a = a - s;
    CircleMap::new(&p, &psi)
}

fn circ(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn translation_conjugacy(s in 0.0f64..1.0, x0 in 0.0f64..1.0, seed in any::<u64>()) {
        let base = map_with(0.3);
        let moved = shifted_map(s, 0.3);
        let mut r1 = NoiseStream::new(seed);
        let mut r2 = NoiseStream::new(seed);
        let mut x = x0;
        let mut y = (x0 - s).rem_euclid(1.0);
        for step in 0..3 {
            let w1 = r1.draw(1e-3);
            let w2 = r2.draw(1e-3);
            x = base.eval(x, w1).circle;
            y = moved.eval(y, w2).circle;
            let tol = 1e-12 * 1e3f64.powi(step + 1);
            prop_assert!(circ(x - s, y) <= tol, "step {step}: {x} vs {y}");
        }
    }

    #[test]
    fn ledger_split_is_exact(seed in any::<u64>(), x0 in 0.0f64..1.0) {
        let led = exponent_ledger(desk(), &mut NoiseStream::new(seed), x0, 500).unwrap();
        prop_assert!(led.relative_gap() <= 1e-9);
    }

    #[test]
    fn measure_counts_sum_to_steps(seed in any::<u64>(), n in 0usize..2000, bins in 10usize..64) {
        let m = empirical_measure(&desk().map, 1e-2, &mut NoiseStream::new(seed), 0.3, 10, n, bins).unwrap();
        prop_assert_eq!(m.counts.iter().sum::<u64>(), n as u64);
    }
}
