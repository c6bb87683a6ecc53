//! The finite-time criterion (H3)_{c,k}, the ε-thresholds and exponent constants,
//! and a consolidated hypothesis report.
//!
//! Noiseless critical orbits are iterated in double-double, starting from a
//! critical point polished by Newton steps on ψ' in double-double.

use serde::{Deserialize, Serialize};

use crate::dd::Dd;
use crate::phase_space::{
    build_partition, check_h4, compute_derived_constants, dist_to_set, wrap01, CircleMap, DerivedConstants,
    PhaseError, PsiSpec, SystemParams,
};

pub const DEFAULT_K_CAP: u32 = 32;
pub const DEFAULT_GRID: usize = 1_000_000;

/// Relative slack on threshold comparisons; exponents such as `-(2k+1)(1-β)+α`
/// carry rounding in their last bit.
pub const THRESHOLD_REL_SLACK: f64 = 1e-12;

/// Per-step rounding floor of the double-double orbit, relative to the lift magnitude.
const DD_STEP_ERROR: f64 = 1e-31;

/// Error budget under which an orbit point is still trusted.
const RELIABLE_ERROR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalOrbitReport {
    pub x_hat: f64,
    /// `f^l(x̂)` for `l = 1..=k_cap`.
    pub orbit: Vec<f64>,
    /// `d(f^l(x̂), C)` for `l = 1..=k_cap`.
    pub distances: Vec<f64>,
    /// Number of leading orbit points whose estimated error stays below 1e-10.
    pub reliable_steps: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub c: f64,
    pub k: u32,
    pub k_cap: u32,
    pub orbits: Vec<CriticalOrbitReport>,
    pub pass: bool,
    pub k_max: u32,
    /// Minimum distance over all critical points and `1 ≤ l ≤ k`; infinite when `k = 0`.
    pub min_dist: f64,
}

impl CriterionReport {
    /// Distances for `1 ≤ l ≤ k` of the critical point at `index`.
    pub fn distances_up_to_k(&self, index: usize) -> &[f64] {
        &self.orbits[index].distances[..self.k as usize]
    }
}

/// Newton polish of a critical point: ψ' in double-double, ψ'' in double.
pub fn polish_critical_point(spec: &PsiSpec, x_hat: f64) -> Dd {
    let mut x = Dd::from_f64(x_hat);
    for _ in 0..3 {
        let (_, d1) = spec.eval_dd(x);
        let d2 = spec.eval(x.to_f64()).d2;
        if d2 == 0.0 {
            break;
        }
        x = x - d1.div_f64(d2);
    }
    x
}

fn orbit_dd(params: &SystemParams, spec: &PsiSpec, x_hat: f64, steps: u32) -> Vec<Dd> {
    let map = CircleMap::new(params, spec);
    let mut y = polish_critical_point(spec, x_hat);
    (0..steps)
        .map(|_| {
            y = map.lift_dd(y).frac();
            y
        })
        .collect()
}

/// The noiseless orbit `f¹(x̂), …, f^k(x̂)` reduced to `[0, 1)`.
pub fn critical_orbit(params: &SystemParams, spec: &PsiSpec, x_hat: f64, k: u32) -> Vec<f64> {
    orbit_dd(params, spec, x_hat, k).into_iter().map(|y| wrap01(y.to_f64())).collect()
}

/// Evaluates (H3)_{c,k}, extending each critical orbit to `k_cap` for `k_max`.
pub fn check_h3_with_cap(
    params: &SystemParams,
    spec: &PsiSpec,
    constants: &DerivedConstants,
    c: f64,
    k: u32,
    k_cap: u32,
) -> CriterionReport {
    let k_cap = k_cap.max(k);
    let map = CircleMap::new(params, spec);
    let cs = &constants.critical_set;
    let mut orbits = Vec::with_capacity(cs.len());
    let mut k_max = k_cap;
    let mut min_dist = f64::INFINITY;
    for &x_hat in cs {
        let pts = orbit_dd(params, spec, x_hat, k_cap);
        let orbit: Vec<f64> = pts.iter().map(|y| wrap01(y.to_f64())).collect();
        let distances: Vec<f64> = orbit.iter().map(|&y| dist_to_set(y, cs)).collect();

        let mut err = DD_STEP_ERROR * params.l;
        let mut reliable_steps = 0;
        for &y in &orbit {
            if err > RELIABLE_ERROR {
                break;
            }
            reliable_steps += 1;
            err = err * map.lift(y).1.abs() + DD_STEP_ERROR * params.l;
        }

        if let Some(first_bad) = distances.iter().position(|&d| d < c) {
            k_max = k_max.min(first_bad as u32);
        }
        for &d in &distances[..k as usize] {
            min_dist = min_dist.min(d);
        }
        orbits.push(CriticalOrbitReport { x_hat, orbit, distances, reliable_steps });
    }
    CriterionReport { c, k, k_cap, orbits, pass: min_dist >= c, k_max, min_dist }
}

pub fn check_h3(
    params: &SystemParams,
    spec: &PsiSpec,
    constants: &DerivedConstants,
    c: f64,
    k: u32,
) -> CriterionReport {
    check_h3_with_cap(params, spec, constants, c, k, DEFAULT_K_CAP)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    #[serde(rename = "eps_thmA")]
    pub eps_thm_a: f64,
    #[serde(rename = "eps_thmB")]
    pub eps_thm_b: f64,
    pub eps_lemma21_cap: f64,
    pub eps_sink_max: f64,
    pub lambda0: f64,
    /// `λ₀ ln L`, the lower bound on the Lyapunov exponent in nats/step.
    pub lambda0_ln_l: f64,
    pub gamma: f64,
    pub gamma1: f64,
    pub kbound_ok: bool,
    pub kbound_lhs: f64,
    pub kbound_rhs: f64,
    /// `eps_sink_max < eps_thmA`.
    pub sharpness_gap: bool,
}

pub fn thresholds(params: &SystemParams) -> ThresholdTable {
    let k = params.k as f64;
    let b = params.beta;
    let a = params.alpha;
    let thm_a_exp = -(2.0 * k + 1.0) * (1.0 - b);
    let eps_thm_a = params.lpow(thm_a_exp);
    let eps_thm_b = params.lpow(thm_a_exp + a);
    let eps_lemma21_cap = params.lpow(-(k - 1.0).max(0.5) - b);
    let eps_sink_max = params.lpow(-(2.0 * k + 1.0)) / 49.0;
    let lambda0 = (a / (k + 1.0)).min(0.1);
    let gamma = ((1.0 + b) * ((0.5 + b) * k + 2.0 * b)).max(k * (1.0 - b) - a);
    let gamma1 = 2.0 * (2.0 * k + 1.0);
    let kbound_lhs = (0.3 - 2.5 * b - b * b) * k;
    let kbound_rhs = 2.0 * b * (1.0 + b);
    ThresholdTable {
        eps_thm_a,
        eps_thm_b,
        eps_lemma21_cap,
        eps_sink_max,
        lambda0,
        lambda0_ln_l: lambda0 * params.ln_l(),
        gamma,
        gamma1,
        kbound_ok: kbound_lhs >= kbound_rhs,
        kbound_lhs,
        kbound_rhs,
        sharpness_gap: eps_sink_max < eps_thm_a,
    }
}

/// `x ≥ y` up to [`THRESHOLD_REL_SLACK`].
#[inline]
pub fn at_least(x: f64, y: f64) -> bool {
    x >= y * (1.0 - THRESHOLD_REL_SLACK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    /// Signed margin; nonnegative exactly when the check passes (up to threshold slack).
    pub margin: f64,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, margin: f64, detail: impl Into<String>) -> Self {
        Check { pass, margin, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1: Check,
    pub h2: Check,
    pub h4: Check,
    pub region_valid: Check,
    pub h3: Check,
    pub eps_window: Check,
    pub kbound: Check,
    pub proof_regime: bool,
    pub empirical_regime: bool,
    pub constants: Option<DerivedConstants>,
    pub thresholds: ThresholdTable,
    pub criterion: Option<CriterionReport>,
}

/// Every hypothesis evaluated independently; failures upstream mark dependants as failed.
pub fn hypothesis_report(params: &SystemParams, spec: &PsiSpec, grid_size: usize) -> HypothesisReport {
    let table = thresholds(params);
    let not_run = |why: &str| Check::new(false, f64::NAN, format!("not evaluated: {why}"));

    let (h1, h2, constants) = match compute_derived_constants(spec, grid_size) {
        Ok(c) => (
            Check::new(true, c.critical_set.len() as f64, format!("{} simple critical points", c.critical_set.len())),
            Check::new(true, c.c1, format!("c1 = {:.12e}", c.c1)),
            Some(c),
        ),
        Err(e @ PhaseError::FlatCriticalPoint { .. }) => {
            (Check::new(true, f64::NAN, "critical set found"), Check::new(false, 0.0, e.to_string()), None)
        }
        Err(e) => (Check::new(false, 0.0, e.to_string()), not_run("H1 failed"), None),
    };

    let (h4, region_valid, h3, criterion) = match &constants {
        Some(c) => {
            let r4 = check_h4(c);
            let h4 = Check::new(
                r4.pass,
                0.1 - r4.psi_d1_norm.max(r4.psi_d2_norm),
                format!("|psi'| = {:.12e}, |psi''| = {:.12e}", r4.psi_d1_norm, r4.psi_d2_norm),
            );
            let region = match build_partition(params, c) {
                Ok(p) => {
                    let cs = &p.critical_set;
                    let gap = if cs.len() == 1 {
                        1.0
                    } else {
                        (0..cs.len())
                            .map(|i| crate::phase_space::circle_dist(cs[i], cs[(i + 1) % cs.len()]))
                            .fold(f64::INFINITY, f64::min)
                    };
                    Check::new(true, 0.5 * gap - p.radii[0], format!("r(-beta) = {:.12e}", p.radii[0]))
                }
                Err(e @ PhaseError::RegionOverflow { radius, half_gap, .. }) => {
                    Check::new(false, half_gap - radius, e.to_string())
                }
                Err(e) => Check::new(false, f64::NAN, e.to_string()),
            };
            let rep = check_h3(params, spec, c, params.c, params.k);
            let h3 = Check::new(
                rep.pass,
                if params.k == 0 { f64::INFINITY } else { rep.min_dist - params.c },
                format!("min distance {:.12e}, k_max {}", rep.min_dist, rep.k_max),
            );
            (h4, region, h3, Some(rep))
        }
        None => (not_run("constants unavailable"), not_run("constants unavailable"), not_run("constants unavailable"), None),
    };

    let lower_ok = at_least(params.epsilon, table.eps_thm_b);
    let upper_ok = params.epsilon < table.eps_lemma21_cap;
    let window_margin = if params.epsilon > 0.0 {
        (params.epsilon / table.eps_thm_b).ln().min((table.eps_lemma21_cap / params.epsilon).ln())
    } else {
        f64::NEG_INFINITY
    };
    let eps_window = Check::new(
        lower_ok && upper_ok,
        window_margin,
        format!("[{:.12e}, {:.12e})", table.eps_thm_b, table.eps_lemma21_cap),
    );
    let kbound = Check::new(
        table.kbound_ok,
        table.kbound_lhs - table.kbound_rhs,
        format!("{:.12} >= {:.12}", table.kbound_lhs, table.kbound_rhs),
    );

    let empirical_regime = h1.pass && h2.pass && region_valid.pass && h3.pass && lower_ok;
    let proof_regime = empirical_regime && h4.pass && eps_window.pass && kbound.pass;
    HypothesisReport {
        h1,
        h2,
        h4,
        region_valid,
        h3,
        eps_window,
        kbound,
        proof_regime,
        empirical_regime,
        constants,
        thresholds: table,
        criterion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> (SystemParams, PsiSpec, DerivedConstants) {
        let spec = PsiSpec::desk();
        let c = compute_derived_constants(&spec, 100_000).unwrap();
        (SystemParams::desk(), spec, c)
    }

    // 50-digit reference: frac(L/(4π²) + a) etc.
    const L_OVER_4PI2: f64 = 101.321_183_642_337_771_443_879_463_209_727_638_904_4;
    const A_STAR_K0: f64 = 0.928_816_357_662_228_556_120_536_790_272_361_095_6;

    #[test]
    fn orbit_examples() {
        let (p, s, _) = desk();
        assert!(critical_orbit(&p, &s, 0.25, 0).is_empty());
        let o = critical_orbit(&p, &s, 0.25, 1);
        assert!((o[0] - 0.621_183_642_337_771_4).abs() < 1e-13);
        let fixed = SystemParams { a: 0.928_816_35, ..p };
        let o = critical_orbit(&fixed, &s, 0.25, 1);
        assert!((o[0] - 0.25).abs() < 1e-8);
        let exact = SystemParams { a: A_STAR_K0, ..p };
        let o = critical_orbit(&exact, &s, 0.25, 3);
        for y in o {
            assert!((y - 0.25).abs() < 1e-13);
        }
        assert!((L_OVER_4PI2 + 0.3 - 101.0 - 0.621_183_642_337_771_4).abs() < 1e-13);
    }

    #[test]
    fn h3_examples() {
        let (p, s, c) = desk();
        let r = check_h3(&p, &s, &c, 0.1, 0);
        assert!(r.pass);
        let r = check_h3(&p, &s, &c, 0.1, 1);
        assert!(r.pass);
        // d(0.62118364…, {0.25, 0.75}) = 0.12881635766222855…
        assert!((r.distances_up_to_k(0)[0] - 0.128_816_357_662_228_56).abs() < 1e-12);
        assert!(r.k_max >= 1);
        let fixed = SystemParams { a: A_STAR_K0, ..p };
        let r = check_h3(&fixed, &s, &c, 0.1, 1);
        assert!(!r.pass);
        assert!(r.min_dist < 1e-12);
        assert_eq!(r.k_max, 0);
    }

    #[test]
    fn dd_orbit_tracks_a_direct_double_orbit_initially() {
        let (p, s, c) = desk();
        let r = check_h3(&p, &s, &c, 0.1, 1);
        let map = CircleMap::new(&p, &s);
        let mut y = 0.25;
        for l in 0..3 {
            y = map.eval(y, 0.0).circle;
            assert!((y - r.orbits[0].orbit[l]).abs() < 1e-6, "step {l}");
        }
        assert!(r.orbits[0].reliable_steps >= 4);
        assert!(r.orbits[0].reliable_steps < DEFAULT_K_CAP);
    }

    #[test]
    fn threshold_examples() {
        let t = thresholds(&SystemParams::desk());
        // 50-digit references for 4000^{-2.1}, 4000^{-0.8}, 4000^{-3}/49
        assert!((t.eps_thm_a / 2.726_930_178_444_050_4e-8 - 1.0).abs() < 1e-12);
        assert!((t.eps_lemma21_cap / 1.313_263_902_201_883_6e-3 - 1.0).abs() < 1e-12);
        assert!((t.eps_sink_max / 3.188_775_510_204_081_6e-13 - 1.0).abs() < 1e-12);
        assert_eq!(t.lambda0, 0.1);
        assert!((t.gamma - 1.82).abs() < 1e-12);
        assert_eq!(t.gamma1, 6.0);
        assert!(!t.kbound_ok);
        assert!((t.lambda0_ln_l - 0.829_404_964_010_202_8).abs() < 1e-12);
        assert!(t.sharpness_gap);
    }

    #[test]
    fn hypothesis_report_examples() {
        let spec = PsiSpec::desk();
        let r = hypothesis_report(&SystemParams::desk(), &spec, 100_000);
        assert!(r.empirical_regime);
        assert!(!r.proof_regime);
        assert!(!r.h4.pass && !r.kbound.pass);
        assert!(r.eps_window.pass);
        let r = hypothesis_report(&SystemParams { epsilon: 0.0, ..SystemParams::desk() }, &spec, 100_000);
        assert!(!r.eps_window.pass);
        assert!(!r.empirical_regime);
        let r = hypothesis_report(&SystemParams { k: 0, ..SystemParams::desk() }, &spec, 100_000);
        assert!(r.h3.pass);
        assert!((r.thresholds.eps_lemma21_cap - 4000f64.powf(-0.8)).abs() < 1e-18);
    }

    #[test]
    fn flat_psi_reports_h1_failure() {
        let spec = PsiSpec::scaled_sine(0.0);
        let r = hypothesis_report(&SystemParams::desk(), &spec, 10_000);
        assert!(!r.h1.pass);
        assert!(!r.empirical_regime);
    }
}
