use std::f64::consts::TAU;
use std::sync::OnceLock;

use proptest::prelude::*;
use rds_core::criterion::{check_h3, thresholds};
use rds_core::noise::NoiseStream;
use rds_core::phase_space::{compute_derived_constants, PsiSpec, SystemParams};
use rds_core::sinks::*;

fn params_at(a: f64, eps: f64) -> SystemParams {
    SystemParams { a, epsilon: eps, ..SystemParams::desk() }
}

fn desk_sink() -> &'static SinkCertificate {
    static C: OnceLock<SinkCertificate> = OnceLock::new();
    C.get_or_init(|| {
        let certs = find_sink_parameter(&SystemParams::desk(), &PsiSpec::desk(), 0.25, 0, DEFAULT_A_GRID);
        assert_eq!(certs.len(), 1);
        certs[0].clone()
    })
}

#[test]
fn period_one_sink_parameter() {
    let c = desk_sink();
    // frac(0.25 − 4000/(4π²))
    assert!((c.a_star - 0.928_816_357_662_228_6).abs() < 1e-14, "{}", c.a_star);
    assert!(c.residual < 1e-12);
    assert_eq!(c.orbit, vec![0.25]);
    assert!((c.r_u - 3.571_428_571_428_571e-5).abs() < 1e-18);
    assert!((c.eps_max - 5.102_040_816_326_531e-6).abs() < 1e-18);
}

#[test]
fn integer_lift_gives_the_critical_point() {
    let p = SystemParams { l: 10.0 * TAU * TAU, ..SystemParams::desk() };
    let certs = find_sink_parameter(&p, &PsiSpec::desk(), 0.25, 0, 1000);
    assert_eq!(certs.len(), 1);
    assert!((certs[0].a_star - 0.25).abs() < 1e-12, "{}", certs[0].a_star);
}

#[test]
fn period_two_certificates_close_up() {
    let certs = find_sink_parameter(&SystemParams::desk(), &PsiSpec::desk(), 0.25, 1, 20_000);
    // roughly one root per unit of variation of the lifted residual
    assert!(certs.len() > 300, "{}", certs.len());
    for c in &certs {
        assert!(c.residual <= DEFAULT_SOLVE_TOL, "a = {} residual {}", c.a_star, c.residual);
        assert_eq!(c.orbit.len(), 2);
        assert!((0.0..1.0).contains(&c.a_star));
    }
    assert!(certs.windows(2).all(|w| w[0].a_star < w[1].a_star));
}

#[test]
fn sink_parameter_fails_the_next_criterion_level() {
    let c = desk_sink();
    let spec = PsiSpec::desk();
    let constants = compute_derived_constants(&spec, 100_000).unwrap();
    let r = check_h3(&params_at(c.a_star, 0.0), &spec, &constants, 0.1, c.k + 1);
    assert!(!r.pass);
    assert_eq!(r.k_max, 0);
    let idx = constants.critical_set.iter().position(|&x| (x - 0.25).abs() < 1e-9).unwrap();
    assert!(r.orbits[idx].distances[c.k as usize] <= DEFAULT_SOLVE_TOL);
}

#[test]
fn trap_holds_at_the_noise_cap() {
    let c = desk_sink();
    let v = verify_trap(c, &params_at(c.a_star, c.eps_max), &PsiSpec::desk(), &NoiseStream::new(42), DEFAULT_TRAP_TRIALS, DEFAULT_TRAP_GRID);
    assert!(v.verified(), "{v:?}");
    assert!(!v.above_eps_max);
    let d = v.max_derivative.unwrap();
    // L·‖ψ''‖·(r_U + ε) ≈ 0.163
    assert!(d < 0.17 && d > 0.1, "{d}");
    assert!(v.witness.is_none());
}

#[test]
fn noiseless_trap_is_superattracting() {
    let c = desk_sink();
    let v = verify_trap(c, &params_at(c.a_star, 0.0), &PsiSpec::desk(), &NoiseStream::new(1), 10, 100);
    assert!(v.verified());
}

#[test]
fn large_noise_escapes_with_a_witness() {
    let p = SystemParams { l: 100.0, ..SystemParams::desk() };
    let certs = find_sink_parameter(&p, &PsiSpec::desk(), 0.25, 0, 1000);
    let c = &certs[0];
    let v = verify_trap(c, &SystemParams { a: c.a_star, epsilon: 100.0 * c.eps_max, ..p }, &PsiSpec::desk(), &NoiseStream::new(1), 1000, 100);
    assert!(v.above_eps_max);
    assert!(!v.verified());
    let w = v.witness.expect("witness");
    assert!(w.distance > c.r_u || w.derivative >= 0.5);
    assert_eq!(w.omegas.len(), 1);
}

#[test]
fn trap_is_monotone_in_noise() {
    let c = desk_sink();
    let ladder = [8.0, 4.0, 2.0, 1.0, 0.5, 0.1, 0.0];
    let ok: Vec<bool> = ladder
        .iter()
        .map(|&f| verify_trap(c, &params_at(c.a_star, f * c.eps_max), &PsiSpec::desk(), &NoiseStream::new(3), 500, 200).verified())
        .collect();
    for i in 1..ok.len() {
        assert!(!ok[i - 1] || ok[i], "{ok:?}");
    }
    assert!(ok[3]);
}

#[test]
fn sink_exponents_are_contracting() {
    let c = verify_trap(desk_sink(), &params_at(desk_sink().a_star, desk_sink().eps_max), &PsiSpec::desk(), &NoiseStream::new(42), 200, 100);
    let r = random_sink_exponent(&c, &params_at(c.a_star, c.eps_max), &PsiSpec::desk(), &NoiseStream::new(5), 10, MIN_SINK_STEPS).unwrap();
    assert!(r.pass);
    assert!(r.max_exponent < -2.0 && r.max_exponent > -6.0, "{}", r.max_exponent);
}

#[test]
fn exponent_needs_a_verified_trap_and_long_runs() {
    let c = desk_sink();
    let p = params_at(c.a_star, c.eps_max);
    assert!(random_sink_exponent(c, &p, &PsiSpec::desk(), &NoiseStream::new(5), 1, MIN_SINK_STEPS).is_err());
    let v = verify_trap(c, &p, &PsiSpec::desk(), &NoiseStream::new(5), 10, 10);
    assert!(random_sink_exponent(&v, &p, &PsiSpec::desk(), &NoiseStream::new(5), 1, 10).is_err());
}

#[test]
fn noiseless_start_at_the_critical_point_is_minus_infinity() {
    let c = desk_sink();
    let p = params_at(c.a_star, 0.0);
    let v = verify_trap(c, &p, &PsiSpec::desk(), &NoiseStream::new(1), 1, 10);
    let r = random_sink_exponent(&v, &p, &PsiSpec::desk(), &NoiseStream::new(1), 1, MIN_SINK_STEPS).unwrap();
    assert_eq!(r.max_exponent, f64::NEG_INFINITY);
}

#[test]
fn support_stays_near_the_orbit() {
    let c = desk_sink();
    let r = support_check(c, &params_at(c.a_star, c.eps_max), &PsiSpec::desk(), &NoiseStream::new(2), 10, 20_000, 100).unwrap();
    assert!(r.pass, "{r:?}");
    // x̂ = 0.25 is the edge between bins 24 and 25
    assert_eq!(r.occupied, vec![24, 25]);
}

#[test]
fn starts_cover_the_trap() {
    let c = desk_sink();
    let s = starts_in_trap(c, 5);
    assert_eq!(s.len(), 5);
    assert!((s[0] - (c.x_hat - c.r_u)).abs() < 1e-15 && (s[4] - (c.x_hat + c.r_u)).abs() < 1e-15);
    assert_eq!(s[2], c.x_hat);
}

proptest! {
    #[test]
    fn sink_cap_sits_below_the_theorem_threshold(l in 100.0f64..1e5, k in 0u32..4, beta in 0.01f64..0.49) {
        prop_assume!(l.powf((2 * k + 1) as f64 * beta) > 49.0 * (1.0 + 1e-9));
        let p = SystemParams { l, k, beta, ..SystemParams::desk() };
        prop_assert!(sink_eps_max(l, k) < thresholds(&p).eps_thm_a);
    }

    #[test]
    fn certificates_reproduce_their_orbit(l in 50.0f64..5000.0, x in prop::sample::select(vec![0.25, 0.75])) {
        let p = SystemParams { l, ..SystemParams::desk() };
        for c in find_sink_parameter(&p, &PsiSpec::desk(), x, 0, 500) {
            prop_assert!(c.residual <= DEFAULT_SOLVE_TOL);
        }
    }
}
