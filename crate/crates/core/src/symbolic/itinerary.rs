//! Itinerary refinements `Q_0 ≤ Q_1 ≤ …` of an interval under a fixed noise
//! sequence, kept in image coordinates.
//!
//! A node stores the time it was born and its image at that time; a leaf's
//! image at later times is the forward image of its birth image. Points of a
//! leaf are recovered by pulling back through the ancestor images, which is
//! contracting and therefore stable where forward iteration is not.

use serde::{Deserialize, Serialize};

use super::{Interval, SymbolicError};
use crate::dd::Dd;
use crate::model::Model;
use crate::noise::NoiseStream;
use crate::phase_space::Region;

pub const DEFAULT_LEAF_CAP: usize = 1_000_000;
pub const DEFAULT_K2: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItineraryAtom {
    pub birth: usize,
    /// Image at time `birth`.
    pub image: Interval,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Time at which the image met `Bᵏ`; the node is frozen from then on.
    pub tau: Option<usize>,
    /// `(t_j, p_j)` bound schedule up to the last time the node was tracked.
    pub bound: Vec<(usize, u32)>,
    pub alive: bool,
    /// Last tracked time and image there.
    pub last_time: usize,
    pub last_image: Interval,
}

impl ItineraryAtom {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItineraryTree {
    /// `shifts[i]` is the noise applied at time `i`.
    pub shifts: Vec<f64>,
    pub depth: usize,
    pub nodes: Vec<ItineraryAtom>,
    /// `(node, time)` of refinements inside a bound period.
    pub bound_splits: Vec<(usize, usize)>,
}

impl ItineraryTree {
    pub fn leaves(&self) -> impl Iterator<Item = (usize, &ItineraryAtom)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_leaf())
    }

    /// Images at times `0..=last_time` of the nested sets containing `node`.
    pub fn path_images(&self, model: &Model, node: usize) -> Vec<Interval> {
        let mut chain = vec![node];
        while let Some(p) = self.nodes[*chain.last().unwrap()].parent {
            chain.push(p);
        }
        chain.reverse();
        let end = self.nodes[node].last_time;
        let mut out = Vec::with_capacity(end + 1);
        for (pos, &id) in chain.iter().enumerate() {
            let n = &self.nodes[id];
            let until = chain.get(pos + 1).map_or(end, |&c| self.nodes[c].birth - 1);
            let mut y = n.image;
            out.push(y);
            for t in n.birth..until {
                y = model.image(y, self.shifts[t]);
                out.push(y);
            }
        }
        out
    }

    /// Points of `node` at time 0, by pulling back its birth image.
    pub fn x_extent(&self, model: &Model, node: usize) -> Interval {
        let images = self.path_images(model, node);
        let n = &self.nodes[node];
        let lo = pullback(model, &images, &self.shifts, n.birth, n.image.lo)[0];
        let hi = pullback(model, &images, &self.shifts, n.birth, n.image.hi)[0];
        Interval::new(lo.min(hi), lo.max(hi))
    }
}

fn in_window(bound: &[(usize, u32)], n: usize) -> bool {
    bound.last().is_some_and(|&(t, p)| n > t && n <= t + p as usize)
}

/// Label and schedule bookkeeping at time `i`; returns `false` if the set is frozen.
fn visit(model: &Model, image: Interval, shift: f64, i: usize, bound: &mut Vec<(usize, u32)>) -> bool {
    let label = model.partition.deepest_label(image.lo, image.hi, shift);
    if label == Region::B(model.params.k) {
        return false;
    }
    if label.depth() >= 1 && !in_window(bound, i) {
        bound.push((i, label.depth()));
    }
    true
}

/// Full refinement tree of `i0` up to time `n` under `shifts[0..=n]`.
pub fn itinerary_refinement(
    model: &Model,
    shifts: &[f64],
    i0: Interval,
    n: usize,
    leaf_cap: usize,
) -> Result<ItineraryTree, SymbolicError> {
    if shifts.len() <= n {
        return Err(SymbolicError::Precondition(format!("need {} shifts, got {}", n + 1, shifts.len())));
    }
    let mut tree = ItineraryTree { shifts: shifts[..=n].to_vec(), depth: n, nodes: Vec::new(), bound_splits: Vec::new() };
    let roots = model.fine.refine(shifts[0], i0, leaf_cap as u64).map_err(|_| SymbolicError::LeafCapExceeded { cap: leaf_cap })?;
    let mut frontier: Vec<usize> = Vec::new();
    for atom in roots {
        frontier.push(tree.nodes.len());
        tree.nodes.push(ItineraryAtom {
            birth: 0,
            image: atom,
            parent: None,
            children: Vec::new(),
            tau: None,
            bound: Vec::new(),
            alive: true,
            last_time: 0,
            last_image: atom,
        });
    }
    for i in 0..=n {
        let mut next = Vec::with_capacity(frontier.len());
        for id in frontier {
            let node = &mut tree.nodes[id];
            let y = node.last_image;
            node.last_time = i;
            if !visit(model, y, shifts[i], i, &mut node.bound) {
                node.tau = Some(i);
                node.alive = false;
                continue;
            }
            if i == n {
                next.push(id);
                continue;
            }
            let img = model.image(y, shifts[i]);
            let budget = leaf_cap.saturating_sub(next.len()) as u64;
            let atoms = model
                .fine
                .refine(shifts[i + 1], img, budget)
                .map_err(|_| SymbolicError::LeafCapExceeded { cap: leaf_cap })?;
            if atoms.len() == 1 {
                node.last_image = img;
                next.push(id);
                continue;
            }
            let bound = node.bound.clone();
            if in_window(&bound, i + 1) {
                tree.bound_splits.push((id, i + 1));
            }
            for atom in atoms {
                let child = tree.nodes.len();
                tree.nodes[id].children.push(child);
                tree.nodes.push(ItineraryAtom {
                    birth: i + 1,
                    image: atom,
                    parent: Some(id),
                    children: Vec::new(),
                    tau: None,
                    bound: bound.clone(),
                    alive: true,
                    last_time: i + 1,
                    last_image: atom,
                });
                next.push(child);
            }
        }
        if next.len() > leaf_cap {
            return Err(SymbolicError::LeafCapExceeded { cap: leaf_cap });
        }
        frontier = next;
    }
    Ok(tree)
}

/// How `follow_leaf` picks a child at each refinement.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum LeafSelector {
    /// The child containing the image of a designated point of `I0`, tracked in double-double.
    Point(f64),
    /// The child containing a uniform point of the parent image: leaves are drawn with
    /// probability proportional to image length.
    Random(NoiseStream),
}

/// One root-to-leaf path of the refinement tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowedLeaf {
    pub shifts: Vec<f64>,
    /// Image at each time `0..=last_time`.
    pub images: Vec<Interval>,
    /// Times at which the path was refined.
    pub splits: Vec<usize>,
    pub tau: Option<usize>,
    pub bound: Vec<(usize, u32)>,
    /// Refinement times inside a bound period.
    pub bound_splits: Vec<usize>,
}

impl FollowedLeaf {
    pub fn last_time(&self) -> usize {
        self.images.len() - 1
    }

    /// `τ` not reached and the last time lies outside every `(t_j, t_j + p_j]`.
    pub fn free_at_end(&self) -> bool {
        self.tau.is_none() && !in_window(&self.bound, self.last_time())
    }
}

/// Follows a single leaf of the refinement of `i0` up to time `n` (or its `τ`).
pub fn follow_leaf(model: &Model, shifts: &[f64], i0: Interval, n: usize, selector: &mut LeafSelector) -> FollowedLeaf {
    assert!(shifts.len() > n, "need n + 1 shifts");
    let mut tracked = match selector {
        LeafSelector::Point(x) => Some(Dd::from_f64(*x)),
        LeafSelector::Random(_) => None,
    };
    let pick = |selector: &mut LeafSelector, iv: Interval, y: Option<Dd>| -> f64 {
        match selector {
            LeafSelector::Point(_) => y.expect("tracked").to_f64(),
            LeafSelector::Random(s) => s.uniform(iv.lo, iv.hi),
        }
    };
    let mut leaf = FollowedLeaf {
        shifts: shifts[..=n].to_vec(),
        images: Vec::with_capacity(n + 1),
        splits: Vec::new(),
        tau: None,
        bound: Vec::new(),
        bound_splits: Vec::new(),
    };
    let x = pick(selector, i0, tracked);
    let first = model.fine.atom_containing(shifts[0], i0, x);
    if first != i0 {
        leaf.splits.push(0);
    }
    let mut y = first;
    for i in 0..=n {
        leaf.images.push(y);
        if !visit(model, y, shifts[i], i, &mut leaf.bound) {
            leaf.tau = Some(i);
            break;
        }
        if i == n {
            break;
        }
        let img = model.image(y, shifts[i]);
        tracked = tracked.map(|t| model.map.lift_dd(t + Dd::from_f64(shifts[i])));
        let x = pick(selector, img, tracked);
        let next = model.fine.atom_containing(shifts[i + 1], img, x);
        if next != img {
            leaf.splits.push(i + 1);
            if in_window(&leaf.bound, i + 1) {
                leaf.bound_splits.push(i + 1);
            }
        }
        y = next;
    }
    leaf
}

/// Backward orbit `y_0, …, y_m` with `y_m = target` and `y_i ∈ images[i]`.
pub fn pullback(model: &Model, images: &[Interval], shifts: &[f64], m: usize, target: f64) -> Vec<f64> {
    let mut orbit = vec![0.0; m + 1];
    orbit[m] = target;
    for i in (0..m).rev() {
        orbit[i] = preimage(model, images[i], shifts[i], orbit[i + 1]);
    }
    orbit
}

/// `x ∈ A` with `f̃(x + ω) = y`; `f̃` is monotone on `A + ω`. Safeguarded Newton.
fn preimage(model: &Model, a: Interval, omega: f64, y: f64) -> f64 {
    let g = |x: f64| {
        let (v, d) = model.lift(x + omega);
        (v - y, d)
    };
    let (glo, _) = g(a.lo);
    let (ghi, _) = g(a.hi);
    if glo == 0.0 {
        return a.lo;
    }
    if ghi == 0.0 {
        return a.hi;
    }
    if glo.signum() == ghi.signum() {
        // target rounded just outside the image
        return if glo.abs() < ghi.abs() { a.lo } else { a.hi };
    }
    let increasing = ghi > 0.0;
    let (mut lo, mut hi) = (a.lo, a.hi);
    let mut x = lo + (hi - lo) * (-glo / (ghi - glo));
    for _ in 0..100 {
        let (v, d) = g(x);
        if v == 0.0 {
            return x;
        }
        if (v > 0.0) == increasing {
            hi = x;
        } else {
            lo = x;
        }
        let step = x - v / d;
        let nx = if d != 0.0 && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if nx == x || hi - lo <= f64::EPSILON * x.abs().max(1.0) {
            return nx;
        }
        x = nx;
    }
    x
}

/// Double-double backward orbit; `images` are f64 brackets.
pub(crate) fn pullback_dd(model: &Model, images: &[Interval], shifts: &[f64], m: usize, target: Dd) -> Vec<Dd> {
    let mut orbit = vec![Dd::ZERO; m + 1];
    orbit[m] = target;
    for i in (0..m).rev() {
        let x0 = preimage(model, images[i], shifts[i], orbit[i + 1].to_f64());
        let w = Dd::from_f64(shifts[i]);
        let mut x = Dd::from_f64(x0);
        for _ in 0..3 {
            let (v, d) = model.map.lift_dd_with_derivative(x + w);
            if d.hi == 0.0 {
                break;
            }
            x = x - (v - orbit[i + 1]) / d;
        }
        orbit[i] = x;
    }
    orbit
}

/// `Σ_{i<m} ln|f̃'(y_i + ω_i)|` along an orbit.
fn log_derivative(model: &Model, orbit: &[f64], shifts: &[f64]) -> f64 {
    orbit[..orbit.len() - 1].iter().zip(shifts).map(|(&y, &w)| model.lift(y + w).1.abs().ln()).sum()
}

/// `exp(K2 L^{-1/2} + 4‖ψ''‖ L^{2β} Δ)`.
pub fn distortion_bound(model: &Model, delta: f64, k2: f64) -> f64 {
    let p = &model.params;
    (k2 * p.lpow(-0.5) + 4.0 * model.constants.psi_d2_norm * p.lpow(2.0 * p.beta) * delta).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub n: usize,
    pub points: usize,
    /// Largest ratio of derivatives over sampled pairs.
    pub max_ratio: f64,
    /// Bound evaluated at the pair attaining `max_ratio`.
    pub bound_at_max: f64,
    /// Largest `ln ratio / ln bound` over pairs; at most 1 when every pair passes.
    pub worst_fraction: f64,
    pub violations: usize,
}

/// Derivative ratios of `f̃^n_ω` over a grid of `points` on the leaf (`n` = last time).
pub fn distortion_check(model: &Model, leaf: &FollowedLeaf, points: usize, k2: f64) -> DistortionReport {
    let n = leaf.last_time();
    let img = leaf.images[n];
    let m = points.max(2);
    let samples: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let y = img.lo + img.len() * (j as f64 / (m - 1) as f64);
            let orbit = pullback(model, &leaf.images, &leaf.shifts, n, y);
            (y, log_derivative(model, &orbit, &leaf.shifts))
        })
        .collect();
    let mut rep = DistortionReport { n, points: m, max_ratio: 1.0, bound_at_max: distortion_bound(model, 0.0, k2), worst_fraction: 0.0, violations: 0 };
    for a in 0..m {
        for b in a + 1..m {
            let log_ratio = (samples[a].1 - samples[b].1).abs();
            let bound = distortion_bound(model, (samples[a].0 - samples[b].0).abs(), k2);
            let frac = log_ratio / bound.ln();
            if log_ratio.exp() > rep.max_ratio {
                rep.max_ratio = log_ratio.exp();
                rep.bound_at_max = bound;
            }
            rep.worst_fraction = rep.worst_fraction.max(frac);
            if frac > 1.0 {
                rep.violations += 1;
            }
        }
    }
    rep
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub n: usize,
    /// Smallest `ln|(f̃^n_ω)'|` over sampled points.
    pub min_log_derivative: f64,
    /// `n (1/2 − β) ln L`.
    pub required: f64,
    pub pass: bool,
}

/// `|(f̃^n_ω)'| ≥ L^{n(1/2−β)}` on a grid of the leaf.
pub fn derivative_growth_check(model: &Model, leaf: &FollowedLeaf, points: usize) -> GrowthReport {
    let n = leaf.last_time();
    let img = leaf.images[n];
    let m = points.max(2);
    let min_log_derivative = (0..m)
        .map(|j| {
            let y = img.lo + img.len() * (j as f64 / (m - 1) as f64);
            log_derivative(model, &pullback(model, &leaf.images, &leaf.shifts, n, y), &leaf.shifts)
        })
        .fold(f64::INFINITY, f64::min);
    let required = n as f64 * (0.5 - model.params.beta) * model.params.ln_l();
    GrowthReport { n, min_log_derivative, required, pass: min_log_derivative >= required }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSurvey {
    /// Free leaves measured.
    pub leaves: usize,
    /// Leaves drawn, free or not.
    pub attempts: usize,
    pub max_depth: usize,
    pub max_ratio: f64,
    /// Bound at the leaf attaining `max_ratio`.
    pub bound_at_max: f64,
    pub violations: usize,
}

/// Draws leaves at uniform depth in `1..=max_depth` until `leaves` free ones are
/// measured (at most `4·leaves` draws). Draw `r` uses `substream(r)` only.
pub fn distortion_survey(
    model: &Model,
    stream: &NoiseStream,
    leaves: usize,
    max_depth: usize,
    points: usize,
    k2: f64,
) -> DistortionSurvey {
    let eps = model.params.epsilon;
    let mut out = DistortionSurvey { leaves: 0, attempts: 0, max_depth, max_ratio: 1.0, bound_at_max: 1.0, violations: 0 };
    let mut r = 0u64;
    while out.leaves < leaves && out.attempts < 4 * leaves {
        let mut s = stream.substream(r);
        r += 1;
        out.attempts += 1;
        let x0 = s.unit();
        let depth = 1 + (s.next_u64() % max_depth.max(1) as u64) as usize;
        let shifts: Vec<f64> = (0..=depth).map(|i| if i == 0 { 0.0 } else { s.draw(eps) }).collect();
        let leaf = follow_leaf(model, &shifts, Interval::around(x0, eps), depth, &mut LeafSelector::Random(s.substream(1)));
        if !leaf.free_at_end() {
            continue;
        }
        out.leaves += 1;
        let d = distortion_check(model, &leaf, points, k2);
        out.violations += d.violations;
        if d.max_ratio > out.max_ratio {
            out.max_ratio = d.max_ratio;
            out.bound_at_max = d.bound_at_max;
        }
    }
    out
}
