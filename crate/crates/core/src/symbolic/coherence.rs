//! Shadowing of the critical orbit during a bound period, and re-expansion
//! of short intervals in the innermost region.

use serde::{Deserialize, Serialize};

use super::{Interval, SymbolicError};
use crate::criterion::{critical_orbit, thresholds};
use crate::model::Model;
use crate::noise::NoiseStream;
use crate::phase_space::circle_dist;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub level: u32,
    pub trials: usize,
    /// Sampling radius `K1⁻¹ L^{-(l+β)/2}` around the critical point.
    pub radius: f64,
    pub max_distance: f64,
    /// `L^{-β/2}`.
    pub threshold: f64,
    pub violations: usize,
    pub pass: bool,
}

/// `d(f^i_ω(x), f^i(x̂))` for `i = 1..=ω.len()`.
pub fn shadowing_distances(model: &Model, x: f64, omegas: &[f64], orbit: &[f64]) -> Vec<f64> {
    let mut y = x;
    omegas
        .iter()
        .zip(orbit)
        .map(|(&w, &target)| {
            y = model.map.eval(y, w).circle;
            circle_dist(y, target)
        })
        .collect()
}

/// Starts near a critical point, `level` noisy steps, distance to the critical orbit.
/// The first `2^level` trials use the extreme noise vectors `(±ε, …, ±ε)`.
pub fn bound_period_coherence_check(
    model: &Model,
    stream: &mut NoiseStream,
    level: u32,
    trials: usize,
) -> Result<CoherenceReport, SymbolicError> {
    let p = &model.params;
    if level == 0 || level > p.k {
        return Err(SymbolicError::Precondition(format!("level {level} outside 1..={}", p.k)));
    }
    let cap = thresholds(p).eps_lemma21_cap;
    if p.epsilon >= cap {
        return Err(SymbolicError::Precondition(format!("ε = {:e} is not below the cap {cap:e}", p.epsilon)));
    }
    let radius = p.lpow(-(level as f64 + p.beta) / 2.0) / model.constants.k1;
    let threshold = p.lpow(-p.beta / 2.0);
    let cs = &model.constants.critical_set;
    let orbits: Vec<Vec<f64>> = cs.iter().map(|&c| critical_orbit(p, &model.psi, c, level)).collect();
    let extremes = 1usize << level;

    let mut max_distance: f64 = 0.0;
    let mut violations = 0;
    let mut omegas = vec![0.0; level as usize];
    for t in 0..trials {
        let which = (stream.next_u64() % cs.len() as u64) as usize;
        let x = cs[which] + stream.uniform(-radius, radius);
        for (i, w) in omegas.iter_mut().enumerate() {
            *w = if t < extremes {
                if (t >> i) & 1 == 1 { p.epsilon } else { -p.epsilon }
            } else {
                stream.draw(p.epsilon)
            };
        }
        let d = shadowing_distances(model, x, &omegas, &orbits[which]).into_iter().fold(0.0, f64::max);
        if d > threshold {
            violations += 1;
        }
        max_distance = max_distance.max(d);
    }
    Ok(CoherenceReport { level, trials, radius, max_distance, threshold, violations, pass: violations == 0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReexpansionReport {
    pub gamma0: f64,
    pub trials: usize,
    /// `L^{-(k+1)(1−β)+γ₀}`.
    pub length: f64,
    /// `L^{-(k+1)(1−β)+3γ₀/2}`.
    pub required: f64,
    pub min_image: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Intervals of the minimal admissible length inside `Bᵏ`, mapped `k + 1` noisy steps.
/// The first trial is centred on a critical point, the worst placement.
pub fn reexpansion_check(
    model: &Model,
    stream: &mut NoiseStream,
    gamma0: f64,
    trials: usize,
) -> Result<ReexpansionReport, SymbolicError> {
    let p = &model.params;
    if gamma0 <= p.beta / 2.0 {
        return Err(SymbolicError::Precondition(format!("γ₀ = {gamma0} must exceed β/2")));
    }
    let base = -(p.k as f64 + 1.0) * (1.0 - p.beta);
    let length = p.lpow(base + gamma0);
    let required = p.lpow(base + 1.5 * gamma0);
    let rk = model.partition.deepest_radius();
    if length > 2.0 * rk {
        return Err(SymbolicError::Precondition(format!("length {length:e} does not fit in Bᵏ of radius {rk:e}")));
    }
    let cs = &model.constants.critical_set;
    let mut min_image = f64::INFINITY;
    let mut violations = 0;
    for t in 0..trials {
        let which = (stream.next_u64() % cs.len() as u64) as usize;
        let c = cs[which];
        let lo = if t == 0 { c - 0.5 * length } else { stream.uniform(c - rk, c + rk - length) };
        let mut j = Interval::new(lo, lo + length);
        for _ in 0..=p.k {
            j = model.image(j, stream.draw(p.epsilon));
        }
        if j.len() < required {
            violations += 1;
        }
        min_image = min_image.min(j.len());
    }
    Ok(ReexpansionReport { gamma0, trials, length, required, min_image, violations, pass: violations == 0 })
}
