//! Parameters with a superattracting periodic critical orbit, and checks that
//! the noisy chain keeps a random sink near that orbit for small noise.
//!
//! The lifted residual `h(a) = f̃_a^{k+1}(x̂) − x̂` is continuous in `a` because ψ
//! is periodic, so roots of the circle residual are the integer crossings of `h`.
//! No seam bookkeeping is needed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::polish_critical_point;
use crate::dd::Dd;
use crate::noise::NoiseStream;
use crate::phase_space::{circle_dist, wrap01, CircleMap, PsiSpec, SystemParams};
use crate::simulate::{empirical_measure, finite_time_exponent_batch, SimulateError};

pub const DEFAULT_A_GRID: usize = 100_000;
pub const DEFAULT_SOLVE_TOL: f64 = 1e-12;
pub const DEFAULT_TRAP_GRID: usize = 1_000;
pub const DEFAULT_TRAP_TRIALS: usize = 10_000;
pub const DEFAULT_SINK_STARTS: usize = 100;
pub const MIN_SINK_STEPS: usize = 100_000;

const BISECTION_STEPS: usize = 200;
/// ω-vectors per rayon task in the trap search.
const TRIAL_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
}

/// First escape or derivative failure found by the trap search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapWitness {
    pub x: f64,
    pub omegas: Vec<f64>,
    /// `d(f^{k+1}_ω(x), x̂)`.
    pub distance: f64,
    /// `|(f^{k+1}_ω)'(x)|`.
    pub derivative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkCertificate {
    pub k: u32,
    pub a_star: f64,
    pub x_hat: f64,
    /// `x̂, f(x̂), …, f^k(x̂)` on the circle.
    pub orbit: Vec<f64>,
    /// `d(f^{k+1}(x̂), x̂)`, evaluated in double-double.
    pub residual: f64,
    /// `(1/7) L^{-(k+1)}`.
    pub r_u: f64,
    /// `(1/49) L^{-(2k+1)}`.
    pub eps_max: f64,
    pub trap_verified: bool,
    pub derivative_verified: bool,
    /// Noise amplitude of the last trap verification.
    pub epsilon_tested: Option<f64>,
    pub above_eps_max: bool,
    pub max_derivative: Option<f64>,
    pub max_escape: Option<f64>,
    pub witness: Option<TrapWitness>,
}

impl SinkCertificate {
    pub fn verified(&self) -> bool {
        self.trap_verified && self.derivative_verified
    }
}

pub fn sink_radius(l: f64, k: u32) -> f64 {
    l.powi(-(k as i32 + 1)) / 7.0
}

pub fn sink_eps_max(l: f64, k: u32) -> f64 {
    l.powi(-(2 * k as i32 + 1)) / 49.0
}

/// `f̃_a^{k+1}(x̂) − x̂` in double-double.
fn lifted_residual(map: &CircleMap, x_hat: Dd, k: u32) -> Dd {
    let mut y = x_hat;
    for _ in 0..=k {
        y = map.lift_dd(y);
    }
    y - x_hat
}

fn with_a(params: &SystemParams, spec: &PsiSpec, a: f64) -> CircleMap {
    CircleMap { l: params.l, a, psi: spec.clone() }
}

/// Bisection on `h(a) − m`, which has opposite signs at `lo` and `hi`.
fn bisect(params: &SystemParams, spec: &PsiSpec, x_hat: Dd, k: u32, m: f64, mut lo: f64, mut hi: f64) -> f64 {
    let sign = |a: f64| (lifted_residual(&with_a(params, spec, a), x_hat, k) - Dd::from_f64(m)).to_f64();
    let s_lo = sign(lo);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = sign(mid);
        if s == 0.0 {
            return mid;
        }
        if (s < 0.0) == (s_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (r_lo, r_hi) = (sign(lo).abs(), sign(hi).abs());
    if r_lo <= r_hi { lo } else { hi }
}

fn certificate(params: &SystemParams, spec: &PsiSpec, x_hat: Dd, k: u32, a_star: f64) -> SinkCertificate {
    let map = with_a(params, spec, a_star);
    let mut orbit = vec![wrap01(x_hat.to_f64())];
    let mut y = x_hat;
    for _ in 0..k {
        y = map.lift_dd(y);
        orbit.push(wrap01(y.to_f64()));
    }
    let h = lifted_residual(&map, x_hat, k);
    let residual = (h - h.floor()).to_f64();
    SinkCertificate {
        k,
        a_star,
        x_hat: x_hat.to_f64(),
        orbit,
        residual: residual.min(1.0 - residual),
        r_u: sink_radius(params.l, k),
        eps_max: sink_eps_max(params.l, k),
        trap_verified: false,
        derivative_verified: false,
        epsilon_tested: None,
        above_eps_max: false,
        max_derivative: None,
        max_escape: None,
        witness: None,
    }
}

/// All `a ∈ [0, 1)` on the grid scale with `f_a^{k+1}(x̂) = x̂`, sorted. `params.a` is ignored.
pub fn find_sink_parameter(params: &SystemParams, spec: &PsiSpec, x_hat: f64, k: u32, a_grid_size: usize) -> Vec<SinkCertificate> {
    let cells = a_grid_size.max(1);
    let xh = polish_critical_point(spec, x_hat);
    let grid: Vec<f64> = (0..=cells)
        .into_par_iter()
        .map(|i| lifted_residual(&with_a(params, spec, i as f64 / cells as f64), xh, k).to_f64())
        .collect();
    let mut roots: Vec<f64> = (0..cells)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (h0, h1) = (grid[i], grid[i + 1]);
            let (a0, a1) = (i as f64 / cells as f64, (i + 1) as f64 / cells as f64);
            // integers in the half-open range between consecutive samples
            let (m_lo, m_hi) = if h0 <= h1 { (h0.floor() + 1.0, h1.floor()) } else { (h1.ceil(), h0.ceil() - 1.0) };
            let ms: Vec<f64> = if m_hi < m_lo { Vec::new() } else { (0..=(m_hi - m_lo) as i64).map(|j| m_lo + j as f64).collect() };
            let mut out: Vec<f64> = ms.into_iter().map(|m| bisect(params, spec, xh, k, m, a0, a1)).collect();
            if h0 == h0.floor() {
                out.push(a0);
            }
            out
        })
        .filter(|&a| (0.0..1.0).contains(&a))
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= f64::EPSILON);
    roots.into_iter().map(|a| certificate(params, spec, xh, k, a)).collect()
}

/// The extreme vector with sign bits of `t`, or a uniform draw.
fn omega_vector(t: usize, k: u32, eps: f64, stream: &NoiseStream) -> Vec<f64> {
    let steps = k as usize + 1;
    let extremes = 1usize.checked_shl(steps as u32).unwrap_or(usize::MAX);
    if t < extremes {
        (0..steps).map(|i| if (t >> i) & 1 == 1 { eps } else { -eps }).collect()
    } else {
        let mut s = stream.substream(t as u64);
        (0..steps).map(|_| s.draw(eps)).collect()
    }
}

struct TrialOutcome {
    max_derivative: f64,
    max_escape: f64,
    witness: Option<(usize, TrapWitness, bool, bool)>,
}

/// Checks `f^{k+1}_ω(U) ⊂ U` and `|(f^{k+1}_ω)'| < 1/2` on `U = [x̂ − r_U, x̂ + r_U]`
/// sampled at `grid_points` interior points plus both endpoints, over the `2^{k+1}`
/// extreme noise vectors followed by `trials` uniform ones. Runs above `eps_max` too
/// and raises `above_eps_max`, so escapes can be searched for.
pub fn verify_trap(
    cert: &SinkCertificate,
    params: &SystemParams,
    spec: &PsiSpec,
    stream: &NoiseStream,
    trials: usize,
    grid_points: usize,
) -> SinkCertificate {
    let eps = params.epsilon;
    let map = with_a(params, spec, cert.a_star);
    let k = cert.k;
    let extremes = if eps == 0.0 { 1 } else { 1usize << (k + 1).min(20) };
    let total = extremes + if eps == 0.0 { 0 } else { trials };
    let xs: Vec<f64> = (0..grid_points + 2)
        .map(|i| cert.x_hat - cert.r_u + 2.0 * cert.r_u * i as f64 / (grid_points + 1) as f64)
        .collect();

    let outcomes: Vec<TrialOutcome> = (0..total.div_ceil(TRIAL_BATCH))
        .into_par_iter()
        .map(|b| {
            let mut out = TrialOutcome { max_derivative: 0.0, max_escape: 0.0, witness: None };
            for t in b * TRIAL_BATCH..((b + 1) * TRIAL_BATCH).min(total) {
                let omegas = omega_vector(t, k, eps, stream);
                for &x0 in &xs {
                    let mut x = x0;
                    let mut der = 1.0f64;
                    for &w in &omegas {
                        let v = map.eval(x, w);
                        der *= v.derivative;
                        x = v.circle;
                    }
                    let d = circle_dist(x, cert.x_hat);
                    out.max_derivative = out.max_derivative.max(der.abs());
                    out.max_escape = out.max_escape.max(d);
                    let (trapped, contracting) = (d <= cert.r_u, der.abs() < 0.5);
                    if (!trapped || !contracting) && out.witness.is_none() {
                        let w = TrapWitness { x: x0, omegas: omegas.clone(), distance: d, derivative: der.abs() };
                        out.witness = Some((t, w, trapped, contracting));
                    }
                }
            }
            out
        })
        .collect();

    let mut cert = cert.clone();
    let first = outcomes.iter().filter_map(|o| o.witness.as_ref()).min_by_key(|w| w.0);
    cert.max_derivative = Some(outcomes.iter().map(|o| o.max_derivative).fold(0.0, f64::max));
    cert.max_escape = Some(outcomes.iter().map(|o| o.max_escape).fold(0.0, f64::max));
    cert.derivative_verified = cert.max_derivative.unwrap() < 0.5;
    cert.trap_verified = cert.max_escape.unwrap() <= cert.r_u;
    cert.witness = first.map(|w| w.1.clone());
    cert.epsilon_tested = Some(eps);
    cert.above_eps_max = eps > cert.eps_max;
    cert
}

/// Evenly spaced points of `U`, endpoints included; a single start is `x̂` itself.
pub fn starts_in_trap(cert: &SinkCertificate, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![cert.x_hat],
        m => (0..m).map(|i| wrap01(cert.x_hat - cert.r_u + 2.0 * cert.r_u * i as f64 / (m - 1) as f64)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkExponentReport {
    pub n: usize,
    pub exponents: Vec<f64>,
    pub max_exponent: f64,
    /// `−ln 2 / (k+1)`.
    pub threshold: f64,
    pub pass: bool,
}

/// Finite-time exponents from `starts` points of `U`; `−∞` marks a chain through a critical point.
pub fn random_sink_exponent(
    cert: &SinkCertificate,
    params: &SystemParams,
    spec: &PsiSpec,
    stream: &NoiseStream,
    starts: usize,
    n: usize,
) -> Result<SinkExponentReport, SinkError> {
    if !cert.verified() {
        return Err(SinkError::Precondition("the trap has not been verified".into()));
    }
    if n < MIN_SINK_STEPS {
        return Err(SinkError::Precondition(format!("n must be at least {MIN_SINK_STEPS}")));
    }
    let map = with_a(params, spec, cert.a_star);
    let exponents = finite_time_exponent_batch(&map, params.epsilon, stream, &starts_in_trap(cert, starts), n)?;
    let max_exponent = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = -std::f64::consts::LN_2 / (cert.k as f64 + 1.0);
    Ok(SinkExponentReport { n, exponents, max_exponent, threshold, pass: max_exponent <= threshold })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub bins: usize,
    /// `r_U + ε`.
    pub radius: f64,
    pub occupied: Vec<usize>,
    /// Occupied bins farther than `radius` from every orbit point.
    pub outside: Vec<usize>,
    pub pass: bool,
}

/// Pooled histogram of chains from `starts` points of `U`, start `i` on `substream(i)`.
pub fn support_check(
    cert: &SinkCertificate,
    params: &SystemParams,
    spec: &PsiSpec,
    stream: &NoiseStream,
    starts: usize,
    n_steps: usize,
    bins: usize,
) -> Result<SupportReport, SinkError> {
    let map = with_a(params, spec, cert.a_star);
    let eps = params.epsilon;
    let per_start: Vec<Vec<u64>> = starts_in_trap(cert, starts)
        .into_par_iter()
        .enumerate()
        .map(|(i, x0)| empirical_measure(&map, eps, &mut stream.substream(i as u64), x0, 0, n_steps, bins).map(|m| m.counts))
        .collect::<Result<_, _>>()?;
    let radius = cert.r_u + eps;
    let w = 1.0 / bins as f64;
    let near = |b: usize| {
        let (lo, hi) = (b as f64 * w, (b + 1) as f64 * w);
        cert.orbit.iter().any(|&p| {
            // distance from p to the closed bin arc
            let inside = (lo..=hi).contains(&p);
            inside || circle_dist(p, lo).min(circle_dist(p, hi)) <= radius
        })
    };
    let occupied: Vec<usize> = (0..bins).filter(|&b| per_start.iter().any(|c| c[b] > 0)).collect();
    let outside: Vec<usize> = occupied.iter().copied().filter(|&b| !near(b)).collect();
    Ok(SupportReport { bins, radius, pass: outside.is_empty(), occupied, outside })
}
