//! The base function ψ, the map `f = Lψ + a (mod 1)` with its lift, the
//! derived constants of ψ and the nested region partition `G, I = B⁰, B¹, …, Bᵏ`.
//!
//! Regions are balls around the critical set: `B(η)` has radius `L^η / K1`,
//! and a point at circle distance `d` from the critical set carries the label
//! `max{ l ≤ k : d ≤ r_l }` with `r_l = L^{-l/2-β} / K1`, or `G` when `d > r_0`.
//! Boundary points therefore belong to the deeper region.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dd::Dd;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("H1 failure: psi' has no sign change on [0,1) (psi is constant or degenerate)")]
    NoCriticalPoints,
    #[error("H1 failure: psi' has a non-simple zero near x = {x}")]
    DegenerateZero { x: f64 },
    #[error("H2 failure: |psi''| = {d2:e} at critical point {x} is below tolerance {tol:e}")]
    FlatCriticalPoint { x: f64, d2: f64, tol: f64 },
    #[error("grid size {0} is below the minimum of 10000")]
    GridTooSmall(usize),
    #[error(
        "region overflow: r(-beta) = {radius} is not below half the minimal critical gap {half_gap}; \
         the construction needs L > {min_l}"
    )]
    RegionOverflow { radius: f64, half_gap: f64, min_l: f64 },
    #[error("invalid parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

/// One harmonic `cos_amp·cos(2πjx) + sin_amp·sin(2πjx)`; serialized as `[j, cos_amp, sin_amp]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64)", into = "(u32, f64, f64)")]
pub struct Harmonic {
    pub j: u32,
    pub cos_amp: f64,
    pub sin_amp: f64,
}

impl From<(u32, f64, f64)> for Harmonic {
    fn from((j, cos_amp, sin_amp): (u32, f64, f64)) -> Self {
        Harmonic { j, cos_amp, sin_amp }
    }
}

impl From<Harmonic> for (u32, f64, f64) {
    fn from(h: Harmonic) -> Self {
        (h.j, h.cos_amp, h.sin_amp)
    }
}

fn default_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub terms: Vec<Harmonic>,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

/// `(ψ, ψ', ψ'')` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiValue {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl PsiSpec {
    pub fn new(terms: Vec<Harmonic>) -> Self {
        PsiSpec { terms, tol: default_tol() }
    }

    /// ψ(x) = sin(2πx)/(4π²): critical points 1/4, 3/4, ψ'' = ∓1 there.
    pub fn desk() -> Self {
        Self::scaled_sine(1.0 / (TAU * TAU))
    }

    pub fn scaled_sine(amp: f64) -> Self {
        PsiSpec::new(vec![Harmonic { j: 1, cos_amp: 0.0, sin_amp: amp }])
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        if self.terms.iter().any(|h| h.j == 0) {
            return Err(PhaseError::InvalidParam { field: "psi", reason: "harmonic index j must be >= 1".into() });
        }
        if self.terms.iter().any(|h| !h.cos_amp.is_finite() || !h.sin_amp.is_finite()) {
            return Err(PhaseError::InvalidParam { field: "psi", reason: "amplitudes must be finite".into() });
        }
        if !(self.tol > 0.0 && self.tol < 1e-3) {
            return Err(PhaseError::InvalidParam { field: "psi.tol", reason: "must lie in (0, 1e-3)".into() });
        }
        Ok(())
    }

    /// Exact trig-polynomial values; the argument is reduced modulo 1 first.
    #[inline]
    pub fn eval(&self, x: f64) -> PsiValue {
        let r = x - x.floor();
        let mut v = PsiValue { value: 0.0, d1: 0.0, d2: 0.0 };
        for h in &self.terms {
            let w = TAU * h.j as f64;
            let (s, c) = sin_cos_turns(h.j as f64 * r);
            let base = h.cos_amp * c + h.sin_amp * s;
            v.value += base;
            v.d1 += w * (h.sin_amp * c - h.cos_amp * s);
            v.d2 -= w * w * base;
        }
        v
    }

    /// `(ψ, ψ')` in double-double.
    pub fn eval_dd(&self, x: Dd) -> (Dd, Dd) {
        let r = x.frac();
        let mut value = Dd::ZERO;
        let mut d1 = Dd::ZERO;
        for h in &self.terms {
            let (s, c) = r.mul_f64(h.j as f64).sin_cos_2pi();
            value = value + c.mul_f64(h.cos_amp) + s.mul_f64(h.sin_amp);
            let w = crate::dd::TWO_PI.mul_f64(h.j as f64);
            d1 = d1 + w * (c.mul_f64(h.sin_amp) - s.mul_f64(h.cos_amp));
        }
        (value, d1)
    }

    /// Coefficient bound `Σ (2πj)^m √(a²+b²)` on `‖ψ^{(m)}‖∞`.
    pub fn derivative_bound(&self, m: i32) -> f64 {
        self.terms
            .iter()
            .map(|h| (TAU * h.j as f64).powi(m) * h.cos_amp.hypot(h.sin_amp))
            .sum()
    }
}

/// `(sin 2πt, cos 2πt)` with quadrant reduction, exact at multiples of 1/4.
#[inline]
fn sin_cos_turns(t: f64) -> (f64, f64) {
    let t = t - t.floor();
    let q = (4.0 * t).round();
    let (s, c) = (TAU * (t - 0.25 * q)).sin_cos();
    match q as i64 & 3 {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// Free-function form of [`PsiSpec::eval`].
pub fn eval_psi(spec: &PsiSpec, x: f64) -> PsiValue {
    spec.eval(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub critical_set: Vec<f64>,
    #[serde(rename = "K1")]
    pub k1: f64,
    pub psi_d1_norm: f64,
    pub psi_d2_norm: f64,
    pub c1: f64,
    /// |ψ''| at each critical point, aligned with `critical_set`.
    pub curvatures: Vec<f64>,
    pub grid_size: usize,
}

/// Circle distance between two reals.
#[inline]
pub fn circle_dist(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Distance from `x` to the nearest point of `set` (circle metric).
#[inline]
pub fn dist_to_set(x: f64, set: &[f64]) -> f64 {
    set.iter().map(|&c| circle_dist(x, c)).fold(f64::INFINITY, f64::min)
}

fn nearest_index(x: f64, set: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, &c) in set.iter().enumerate() {
        let d = circle_dist(x, c);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

fn bisect_d1(spec: &PsiSpec, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = spec.eval(lo).d1;
    while hi - lo > spec.tol {
        let mid = 0.5 * (lo + hi);
        let fm = spec.eval(mid).d1;
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let v = spec.eval(x);
        if v.d2 == 0.0 {
            break;
        }
        let nx = x - v.d1 / v.d2;
        if (nx - x).abs() > spec.tol {
            break;
        }
        x = nx;
    }
    x
}

// Golden-section minimisation of |ψ'| on [lo, hi].
fn min_abs_d1(spec: &PsiSpec, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |x: f64| spec.eval(x).d1.abs();
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..120 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Critical set, K1, norms and c1 on a uniform grid of `grid_size` cells.
///
/// `K1` is the minimum over grid cells of a certified lower bound for
/// `|ψ'(x)| / d(x, C)` on the cell: either `(min endpoint |ψ'| − ‖ψ''‖h/2) / max d`
/// or `|ψ''(x̂)| − ‖ψ'''‖·max d` from the mean value theorem at the nearest
/// critical point, whichever is larger. Norms add the second-order margin
/// `‖ψ^{(m+2)}‖h²/8`, valid because the maximum of `|ψ^{(m)}|` is a critical
/// point of `ψ^{(m)}`.
pub fn compute_derived_constants(spec: &PsiSpec, grid_size: usize) -> Result<DerivedConstants, PhaseError> {
    spec.validate()?;
    if grid_size < 10_000 {
        return Err(PhaseError::GridTooSmall(grid_size));
    }
    let n = grid_size;
    let h = 1.0 / n as f64;
    let vals: Vec<PsiValue> = (0..n).map(|i| spec.eval(i as f64 * h)).collect();
    let d1_at = |i: usize| vals[i % n].d1;

    let max_d1 = vals.iter().map(|v| v.d1.abs()).fold(0.0, f64::max);
    let max_d2 = vals.iter().map(|v| v.d2.abs()).fold(0.0, f64::max);
    let b3 = spec.derivative_bound(3);
    let b4 = spec.derivative_bound(4);
    let psi_d1_norm = max_d1 + b3 * h * h / 8.0;
    let psi_d2_norm = max_d2 + b4 * h * h / 8.0;
    if psi_d1_norm == 0.0 {
        return Err(PhaseError::NoCriticalPoints);
    }

    let mut roots = Vec::new();
    for i in 0..n {
        let (v0, v1) = (d1_at(i), d1_at(i + 1));
        let x0 = i as f64 * h;
        if v0 == 0.0 {
            let prev = d1_at(i + n - 1);
            if (prev < 0.0) == (v1 < 0.0) || prev == 0.0 || v1 == 0.0 {
                return Err(PhaseError::DegenerateZero { x: x0 });
            }
            roots.push(x0);
        } else if v1 != 0.0 && (v0 < 0.0) != (v1 < 0.0) {
            roots.push(bisect_d1(spec, x0, x0 + h).rem_euclid(1.0));
        }
    }
    if roots.is_empty() {
        return Err(PhaseError::NoCriticalPoints);
    }
    roots.sort_by(f64::total_cmp);
    let mut critical_set: Vec<f64> = Vec::with_capacity(roots.len());
    for r in roots {
        let r = if r >= 1.0 { 0.0 } else { r };
        if critical_set.last().is_none_or(|&p| circle_dist(p, r) > 10.0 * spec.tol) {
            critical_set.push(r);
        }
    }
    if critical_set.len() > 1 && circle_dist(critical_set[0], *critical_set.last().unwrap()) <= 10.0 * spec.tol {
        critical_set.pop();
    }

    // H2: a zero with a sign change but vanishing ψ''.
    let h2_tol = 1e-6 * psi_d2_norm;
    let mut curvatures = Vec::with_capacity(critical_set.len());
    for &x in &critical_set {
        let d2 = spec.eval(x).d2.abs();
        if d2 < h2_tol {
            return Err(PhaseError::FlatCriticalPoint { x, d2, tol: h2_tol });
        }
        curvatures.push(d2);
    }

    // H1 (simplicity): local minima of |ψ'| that touch zero without a sign change.
    for i in 0..n {
        let prev = d1_at(i + n - 1).abs();
        let cur = d1_at(i).abs();
        let next = d1_at(i + 1).abs();
        if cur <= prev && cur <= next && cur <= psi_d2_norm * h {
            let x = i as f64 * h;
            if dist_to_set(x, &critical_set) <= 2.0 * h {
                continue;
            }
            let (xm, fm) = min_abs_d1(spec, x - h, x + h);
            if fm <= 1e-9 * psi_d1_norm {
                return Err(PhaseError::DegenerateZero { x: xm.rem_euclid(1.0) });
            }
        }
    }

    let c1 = curvatures.iter().copied().fold(f64::INFINITY, f64::min);
    let mut k1 = f64::INFINITY;
    for i in 0..n {
        let (xa, xb) = (i as f64 * h, (i + 1) as f64 * h);
        let (da, db) = (dist_to_set(xa, &critical_set), dist_to_set(xb, &critical_set));
        let dmax = da.max(db) + 0.5 * h;
        let bound_a = (d1_at(i).abs().min(d1_at(i + 1).abs()) - psi_d2_norm * 0.5 * h) / dmax;
        let curv = curvatures[nearest_index(xa, &critical_set)].min(curvatures[nearest_index(xb, &critical_set)]);
        let bound_b = curv - b3 * dmax;
        k1 = k1.min(bound_a.max(bound_b));
    }
    if k1 <= 0.0 {
        return Err(PhaseError::DegenerateZero { x: f64::NAN });
    }

    Ok(DerivedConstants { critical_set, k1, psi_d1_norm, psi_d2_norm, c1, curvatures, grid_size })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H4Report {
    pub pass: bool,
    pub psi_d1_norm: f64,
    pub psi_d2_norm: f64,
}

/// Relative slack for comparing grid norms with 1/10; the norms include a margin of order `h²`.
pub const H4_REL_SLACK: f64 = 1e-9;

pub fn check_h4(constants: &DerivedConstants) -> H4Report {
    let lim = 0.1 * (1.0 + H4_REL_SLACK);
    H4Report {
        pass: constants.psi_d1_norm <= lim && constants.psi_d2_norm <= lim,
        psi_d1_norm: constants.psi_d1_norm,
        psi_d2_norm: constants.psi_d2_norm,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    #[serde(rename = "L")]
    pub l: f64,
    pub a: f64,
    pub beta: f64,
    pub k: u32,
    pub c: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl SystemParams {
    /// Desk profile: L = 4000, a = 0.3, β = 0.3, k = 1, c = 0.1, α = 0.2, ε = 4000^{-1.9}.
    pub fn desk() -> Self {
        SystemParams { l: 4000.0, a: 0.3, beta: 0.3, k: 1, c: 0.1, epsilon: 4000f64.powf(-1.9), alpha: 0.2 }
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        let bad = |field, reason: &str| Err(PhaseError::InvalidParam { field, reason: reason.into() });
        if !(self.l.is_finite() && self.l > 1.0) {
            return bad("L", "must be a finite real > 1");
        }
        if !(0.0..1.0).contains(&self.a) {
            return bad("a", "must lie in [0, 1)");
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return bad("beta", "must lie in (0, 1/2)");
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return bad("c", "must lie in (0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon", "must be a finite real >= 0");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha", "must be a finite real >= 0");
        }
        Ok(())
    }

    #[inline]
    pub fn ln_l(&self) -> f64 {
        self.l.ln()
    }

    /// `L^e`.
    #[inline]
    pub fn lpow(&self, e: f64) -> f64 {
        (e * self.l.ln()).exp()
    }
}

/// One evaluation of the perturbed map at `x + ω`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapValue {
    pub circle: f64,
    pub lift: f64,
    pub derivative: f64,
}

/// Reduction of a real to `[0, 1)`.
#[inline]
pub fn wrap01(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// The lift `f̃(y) = Lψ(y) + a` with its derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleMap {
    pub l: f64,
    pub a: f64,
    pub psi: PsiSpec,
}

impl CircleMap {
    pub fn new(params: &SystemParams, psi: &PsiSpec) -> Self {
        CircleMap { l: params.l, a: params.a, psi: psi.clone() }
    }

    /// `(f̃(y), f̃'(y))`.
    #[inline]
    pub fn lift(&self, y: f64) -> (f64, f64) {
        let v = self.psi.eval(y);
        (self.l * v.value + self.a, self.l * v.d1)
    }

    #[inline]
    pub fn eval(&self, x: f64, omega: f64) -> MapValue {
        let (lift, derivative) = self.lift(x + omega);
        MapValue { circle: wrap01(lift), lift, derivative }
    }

    /// `f̃(y)` in double-double.
    pub fn lift_dd(&self, y: Dd) -> Dd {
        let (v, _) = self.psi.eval_dd(y);
        v.mul_f64(self.l) + Dd::from_f64(self.a)
    }

    /// `(f̃(y), f̃'(y))` in double-double.
    pub fn lift_dd_with_derivative(&self, y: Dd) -> (Dd, Dd) {
        let (v, d) = self.psi.eval_dd(y);
        (v.mul_f64(self.l) + Dd::from_f64(self.a), d.mul_f64(self.l))
    }
}

/// `(circle value, lift value, derivative)` of `f_ω(x) = f(x + ω)`.
pub fn eval_map(params: &SystemParams, spec: &PsiSpec, x: f64, omega: f64) -> MapValue {
    CircleMap::new(params, spec).eval(x, omega)
}

/// Region label. `B(0)` is the annulus `I`; `B(k)` is the innermost ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    G,
    B(u32),
}

impl Region {
    /// Bound period value `p`: 0 on `G ∪ I`, `l` on `B^l`.
    #[inline]
    pub fn depth(self) -> u32 {
        match self {
            Region::G => 0,
            Region::B(l) => l,
        }
    }

    /// Ordering key in which deeper regions are larger; `G` is below `I`.
    #[inline]
    pub fn rank(self) -> i64 {
        match self {
            Region::G => -1,
            Region::B(l) => l as i64,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::G => write!(f, "G"),
            Region::B(0) => write!(f, "I"),
            Region::B(l) => write!(f, "B{l}"),
        }
    }
}

/// A maximal arc of constant label in the tiling of one period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionArc {
    pub lo: f64,
    pub hi: f64,
    pub label: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePartition {
    #[serde(rename = "L")]
    pub l: f64,
    pub beta: f64,
    pub k: u32,
    #[serde(rename = "K1")]
    pub k1: f64,
    pub critical_set: Vec<f64>,
    /// `r_l = L^{-l/2-β}/K1` for `l = 0..=k`.
    pub radii: Vec<f64>,
    /// `r(-1/2-β)`, recorded also when `k = 0`.
    pub inner_radius: f64,
    /// Tiling of `[base, base + 1)` by labelled arcs, in increasing order.
    pub arcs: Vec<RegionArc>,
}

impl PhasePartition {
    /// Label of the region at circle distance `d` from the critical set.
    #[inline]
    pub fn label_at_distance(&self, d: f64) -> Region {
        if d > self.radii[0] {
            return Region::G;
        }
        let mut l = 0;
        while l < self.k && d <= self.radii[l as usize + 1] {
            l += 1;
        }
        Region::B(l)
    }

    /// Circle distance from the interval `[lo, hi]` to the critical set.
    pub fn interval_dist(&self, lo: f64, hi: f64) -> f64 {
        if hi - lo >= 1.0 {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for &c in &self.critical_set {
            let m = (lo - c).ceil();
            if c + m <= hi {
                return 0.0;
            }
            best = best.min(circle_dist(lo, c)).min(circle_dist(hi, c));
        }
        best
    }

    /// Deepest label met by the closed interval `[lo, hi] + ω`.
    #[inline]
    pub fn deepest_label(&self, lo: f64, hi: f64, omega: f64) -> Region {
        self.label_at_distance(self.interval_dist(lo + omega, hi + omega))
    }

    #[inline]
    pub fn deepest_radius(&self) -> f64 {
        self.radii[self.k as usize]
    }

    pub fn base(&self) -> f64 {
        self.arcs[0].lo
    }

    /// Index of the arc containing `y` (lifted) and the integer period offset.
    pub fn locate_arc(&self, y: f64) -> (i64, usize) {
        let base = self.base();
        let mut p = (y - base).floor();
        let mut t = y - p;
        if t >= base + 1.0 {
            p += 1.0;
            t = y - p;
        }
        let idx = self.arcs.partition_point(|arc| arc.lo <= t).saturating_sub(1);
        (p as i64, idx)
    }

    /// Pieces of `[lo, hi]` cut by the region arcs shifted by `−ω`, as `(lo, hi, label)`.
    /// Zero-length pieces are dropped.
    pub fn region_pieces(&self, lo: f64, hi: f64, omega: f64) -> Vec<(f64, f64, Region)> {
        let mut out = Vec::new();
        let (mut p, mut idx) = self.locate_arc(lo + omega);
        let mut start = lo;
        loop {
            let arc = self.arcs[idx];
            let end = (p as f64 + arc.hi) - omega;
            let piece_hi = end.min(hi);
            if piece_hi > start {
                out.push((start, piece_hi, arc.label));
            }
            if end >= hi {
                break;
            }
            start = end;
            idx += 1;
            if idx == self.arcs.len() {
                idx = 0;
                p += 1;
            }
        }
        out
    }
}

/// Nested radii and region tiling.
pub fn build_partition(params: &SystemParams, constants: &DerivedConstants) -> Result<PhasePartition, PhaseError> {
    params.validate()?;
    let cs = &constants.critical_set;
    let radius = |eta: f64| params.lpow(eta) / constants.k1;
    let radii: Vec<f64> = (0..=params.k).map(|l| radius(-(l as f64) / 2.0 - params.beta)).collect();
    let inner_radius = radius(-0.5 - params.beta);

    let min_gap = if cs.len() == 1 {
        1.0
    } else {
        (0..cs.len()).map(|i| circle_dist(cs[i], cs[(i + 1) % cs.len()])).fold(f64::INFINITY, f64::min)
    };
    let half_gap = 0.5 * min_gap;
    if radii[0] >= half_gap {
        // L^{-β}/K1 < g/2  ⇔  L > (K1·g/2)^{-1/β}
        let min_l = (constants.k1 * half_gap).powf(-1.0 / params.beta);
        return Err(PhaseError::RegionOverflow { radius: radii[0], half_gap, min_l });
    }

    let k = params.k as usize;
    let mut arcs = Vec::with_capacity(cs.len() * (2 * k + 2));
    for (i, &c) in cs.iter().enumerate() {
        for l in 0..k {
            arcs.push(RegionArc { lo: c - radii[l], hi: c - radii[l + 1], label: Region::B(l as u32) });
        }
        arcs.push(RegionArc { lo: c - radii[k], hi: c + radii[k], label: Region::B(k as u32) });
        for l in (0..k).rev() {
            arcs.push(RegionArc { lo: c + radii[l + 1], hi: c + radii[l], label: Region::B(l as u32) });
        }
        let next = if i + 1 < cs.len() { cs[i + 1] } else { cs[0] + 1.0 };
        arcs.push(RegionArc { lo: c + radii[0], hi: next - radii[0], label: Region::G });
    }

    Ok(PhasePartition {
        l: params.l,
        beta: params.beta,
        k: params.k,
        k1: constants.k1,
        critical_set: cs.clone(),
        radii,
        inner_radius,
        arcs,
    })
}

/// Label of the region containing `x + ω`; boundary points go to the deeper region.
pub fn classify(partition: &PhasePartition, x: f64, omega: f64) -> Region {
    partition.label_at_distance(dist_to_set(x + omega, &partition.critical_set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn desk_constants() -> DerivedConstants {
        compute_derived_constants(&PsiSpec::desk(), 1_000_000).unwrap()
    }

    #[test]
    fn eval_psi_trivial_points() {
        let s = PsiSpec::desk();
        let v = eval_psi(&s, 0.0);
        assert_eq!(v.value, 0.0);
        assert!((v.d1 - 1.0 / (2.0 * PI)).abs() < 1e-16);
        assert_eq!(v.d2, 0.0);
        let v = eval_psi(&s, 0.25);
        assert!((v.value - 1.0 / (4.0 * PI * PI)).abs() < 1e-17);
        assert!(v.d1.abs() < 1e-16);
        assert!((v.d2 + 1.0).abs() < 1e-15);
        let v = eval_psi(&s, 0.5);
        assert!(v.value.abs() < 1e-17);
        assert!((v.d1 + 1.0 / (2.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn derived_constants_of_desk_psi() {
        let c = desk_constants();
        assert_eq!(c.critical_set.len(), 2);
        assert!((c.critical_set[0] - 0.25).abs() < 1e-15);
        assert!((c.critical_set[1] - 0.75).abs() < 1e-15);
        // grid minimisation of |ψ'|/d over 10⁶ points gives 0.6366197723675814 (= 2/π)
        assert!(c.k1 <= 2.0 / PI);
        assert!((c.k1 - std::f64::consts::FRAC_2_PI).abs() < 1e-5);
        assert!((c.c1 - 1.0).abs() < 1e-12);
        assert!(c.psi_d1_norm >= 1.0 / (2.0 * PI) && c.psi_d1_norm - 1.0 / (2.0 * PI) < 1e-10);
        assert!(c.psi_d2_norm >= 1.0 && c.psi_d2_norm - 1.0 < 1e-10);
    }

    #[test]
    fn k1_inequality_holds_on_a_finer_grid() {
        let s = PsiSpec::new(vec![
            Harmonic { j: 1, cos_amp: 0.02, sin_amp: 0.01 },
            Harmonic { j: 3, cos_amp: 0.0, sin_amp: 0.002 },
        ]);
        let c = compute_derived_constants(&s, 20_000).unwrap();
        for i in 0..200_000 {
            let x = i as f64 / 200_000.0;
            let d = dist_to_set(x, &c.critical_set);
            assert!(s.eval(x).d1.abs() >= c.k1 * d - 1e-15, "x = {x}");
        }
    }

    #[test]
    fn h4_pass_and_fail() {
        assert!(!check_h4(&desk_constants()).pass);
        let small = compute_derived_constants(&PsiSpec::scaled_sine(1.0 / (40.0 * PI * PI)), 1_000_000).unwrap();
        let r = check_h4(&small);
        assert!(r.pass, "{r:?}");
        assert!((r.psi_d1_norm - 1.0 / (20.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn zero_psi_is_h1_failure() {
        let s = PsiSpec::new(vec![Harmonic { j: 1, cos_amp: 0.0, sin_amp: 0.0 }]);
        assert_eq!(compute_derived_constants(&s, 10_000), Err(PhaseError::NoCriticalPoints));
    }

    #[test]
    fn triple_zero_of_psi_prime_is_h2_failure() {
        // ψ' ∝ sin³(2πx) = (3 sin 2πx − sin 6πx)/4
        let s = PsiSpec::new(vec![
            Harmonic { j: 1, cos_amp: -3.0 / TAU, sin_amp: 0.0 },
            Harmonic { j: 3, cos_amp: 1.0 / (3.0 * TAU), sin_amp: 0.0 },
        ]);
        assert!(matches!(compute_derived_constants(&s, 10_000), Err(PhaseError::FlatCriticalPoint { .. })));
    }

    #[test]
    fn double_zero_of_psi_prime_is_h1_failure() {
        let s = PsiSpec::new(vec![
            Harmonic { j: 1, cos_amp: 0.0, sin_amp: 1.0 / TAU },
            Harmonic { j: 2, cos_amp: 0.0, sin_amp: 1.0 / (4.0 * TAU) },
        ]);
        // ψ' = cos 2πx + cos(4πx)/2 has simple zeros only
        assert!(compute_derived_constants(&s, 10_000).is_ok());
        let s = PsiSpec::new(vec![
            Harmonic { j: 1, cos_amp: 0.0, sin_amp: 1.0 / TAU },
            Harmonic { j: 2, cos_amp: 0.0, sin_amp: -1.0 / (2.0 * TAU) },
        ]);
        // ψ' = cos 2πx − cos 4πx touches zero at x = 0 without a sign change
        assert!(matches!(compute_derived_constants(&s, 10_000), Err(PhaseError::DegenerateZero { .. })));
        let shifted = PsiSpec::new(vec![
            Harmonic { j: 1, cos_amp: -(TAU * 0.123).sin() / TAU, sin_amp: (TAU * 0.123).cos() / TAU },
            Harmonic { j: 2, cos_amp: (2.0 * TAU * 0.123).sin() / (2.0 * TAU), sin_amp: -(2.0 * TAU * 0.123).cos() / (2.0 * TAU) },
        ]);
        // same ψ translated by 0.123, so the double zero falls between grid points
        assert!(matches!(compute_derived_constants(&shifted, 10_000), Err(PhaseError::DegenerateZero { .. })));
    }

    #[test]
    fn eval_map_examples() {
        let s = PsiSpec::desk();
        let p = SystemParams { a: 0.3, ..SystemParams::desk() };
        let v = eval_map(&p, &s, 0.0, 0.0);
        assert_eq!(v.circle, 0.3);
        // L/(4π²) = 101.3211836423377714...
        let p = SystemParams { a: 0.928_816_35, ..p };
        let v = eval_map(&p, &s, 0.25, 0.0);
        assert!((v.lift - 102.249_999_992_337_77).abs() < 1e-12);
        assert!((v.circle - 0.249_999_992_337_771_4).abs() < 1e-12);
        assert!(v.derivative.abs() < 1e-12);
    }

    #[test]
    fn partition_radii_and_overflow() {
        let c = desk_constants();
        let p = build_partition(&SystemParams::desk(), &c).unwrap();
        // (π/2)·4000^{-0.3} = 0.13046736152708431668...; 4000^{-0.8}·π/2 = 0.00206287011369105113...
        let scale = (2.0 / PI) / c.k1;
        assert!((p.radii[0] - 0.130_467_361_527_084_32 * scale).abs() < 1e-15);
        assert!((p.radii[1] - 0.002_062_870_113_691_051 * scale).abs() < 1e-17);
        assert!((p.radii[0] / 0.130_467_361_527_084_32 - 1.0).abs() < 1e-5);
        let bad = SystemParams { beta: 0.05, ..SystemParams::desk() };
        match build_partition(&bad, &c) {
            Err(PhaseError::RegionOverflow { radius, half_gap, min_l }) => {
                assert!((radius - 1.037_568_736_819_586).abs() < 1e-4);
                assert_eq!(half_gap, 0.25);
                let ok = SystemParams { l: min_l * 1.001, ..bad };
                assert!(build_partition(&ok, &c).is_ok());
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn classify_examples() {
        let c = desk_constants();
        let p = build_partition(&SystemParams::desk(), &c).unwrap();
        assert_eq!(classify(&p, 0.25, 0.0), Region::B(1));
        assert_eq!(classify(&p, 0.0, 0.0), Region::G);
        assert_eq!(classify(&p, 0.26, 0.0), Region::B(0));
        assert_eq!(format!("{}", classify(&p, 0.26, 0.0)), "I");
        // boundary goes to the deeper region
        assert_eq!(p.label_at_distance(p.radii[1]), Region::B(1));
        assert_eq!(p.label_at_distance(p.radii[0]), Region::B(0));
    }

    #[test]
    fn arcs_tile_one_period() {
        let c = desk_constants();
        for k in 0..4 {
            let p = build_partition(&SystemParams { k, ..SystemParams::desk() }, &c).unwrap();
            let total: f64 = p.arcs.iter().map(|a| a.hi - a.lo).sum();
            assert!((total - 1.0).abs() < 1e-14);
            for w in p.arcs.windows(2) {
                assert_eq!(w[0].hi, w[1].lo);
            }
            for a in &p.arcs {
                let mid = 0.5 * (a.lo + a.hi);
                assert_eq!(classify(&p, mid, 0.0), a.label);
            }
            let g = p.arcs.iter().filter(|a| a.label == Region::G).count();
            assert_eq!(g, c.critical_set.len());
        }
    }

    #[test]
    fn region_pieces_cover_interval() {
        let c = desk_constants();
        let p = build_partition(&SystemParams::desk(), &c).unwrap();
        let pieces = p.region_pieces(-0.7, 2.3, 0.013);
        assert_eq!(pieces[0].0, -0.7);
        assert_eq!(pieces.last().unwrap().1, 2.3);
        for w in pieces.windows(2) {
            assert_eq!(w[0].1, w[1].0);
            assert_ne!(w[0].2, w[1].2);
        }
        for &(lo, hi, label) in &pieces {
            assert_eq!(classify(&p, 0.5 * (lo + hi), 0.013), label);
        }
    }
}
