//! Pushforward of a smeared noise coordinate restricted to one itinerary atom.
//!
//! `X̃_n = F̂(ω') = f̃^{r}(X̃ + ω')` with every later noise value fixed. The atom's
//! endpoints in `ω'`-space come from a double-double pullback and samples are
//! pushed forward in double-double, so the histogram resolves atoms far below
//! f64 forward accuracy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::itinerary::{distortion_bound, follow_leaf, pullback, pullback_dd, LeafSelector};
use super::{Interval, SymbolicError};
use crate::dd::Dd;
use crate::model::Model;
use crate::noise::NoiseStream;

const CHUNK: usize = 1 << 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    /// Number of map applications `r = n − m − 1`.
    pub steps: usize,
    pub samples: usize,
    /// Smeared-coordinate range of the chosen atom.
    pub omega_lo: f64,
    pub omega_hi: f64,
    /// Image of the atom at time `r`; the histogram support.
    pub image: Interval,
    pub counts: Vec<u64>,
    /// Normalised to unit mass on the image.
    pub density: Vec<f64>,
    /// `1/|F̂'|` at bin centres, normalised to unit mean.
    pub oracle: Vec<f64>,
    /// Max/min over nonempty bins.
    pub ratio: f64,
    pub oracle_ratio: f64,
    pub bound: f64,
    /// Samples landing outside the image (rounding at the atom ends).
    pub outside: u64,
    pub pass: bool,
}

fn unit_dd(s: &mut NoiseStream) -> Dd {
    let hi = s.unit();
    let lo = s.unit() * (1.0 / (1u64 << 53) as f64);
    Dd::from_f64(hi) + Dd::from_f64(lo)
}

/// `fixed` holds the noise at times `1..=r`; the last entry only shapes the final refinement.
pub fn density_profile(
    model: &Model,
    x_start: f64,
    fixed: &[f64],
    stream: &NoiseStream,
    samples: usize,
    bins: usize,
    k2: f64,
) -> Result<DensityProfile, SymbolicError> {
    let eps = model.params.epsilon;
    if eps <= 0.0 || bins == 0 || samples == 0 {
        return Err(SymbolicError::Precondition("need ε > 0, samples > 0 and bins > 0".into()));
    }
    let r = fixed.len();
    let mut shifts = Vec::with_capacity(r + 1);
    shifts.push(0.0);
    shifts.extend_from_slice(fixed);

    let i0 = Interval::around(x_start, eps);
    let mut selector = LeafSelector::Random(stream.substream(0));
    let leaf = follow_leaf(model, &shifts, i0, r, &mut selector);
    if !leaf.free_at_end() || leaf.last_time() != r {
        return Err(SymbolicError::Precondition(format!("chosen atom is not free at step {r}")));
    }
    let image = leaf.images[r];
    let ends = [image.lo, image.hi].map(|y| pullback_dd(model, &leaf.images, &shifts, r, Dd::from_f64(y))[0]);
    let (lo, hi) = if ends[0].to_f64() <= ends[1].to_f64() { (ends[0], ends[1]) } else { (ends[1], ends[0]) };
    let width = hi - lo;
    let start = Dd::from_f64(x_start);

    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(Vec<u64>, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = stream.substream(1).substream(c as u64);
            let mut counts = vec![0u64; bins];
            let mut outside = 0;
            let todo = CHUNK.min(samples - c * CHUNK);
            for _ in 0..todo {
                let mut y = lo + width * unit_dd(&mut s);
                for &w in &shifts[..r] {
                    y = model.map.lift_dd(y + Dd::from_f64(w));
                }
                let t = (y.to_f64() - image.lo) / image.len();
                if !(0.0..=1.0).contains(&t) {
                    outside += 1;
                    continue;
                }
                counts[((t * bins as f64) as usize).min(bins - 1)] += 1;
            }
            (counts, outside)
        })
        .collect();
    let mut counts = vec![0u64; bins];
    let mut outside = 0;
    for (c, o) in partial {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
        outside += o;
    }

    let inside: u64 = counts.iter().sum();
    let bin_w = image.len() / bins as f64;
    let density: Vec<f64> = counts.iter().map(|&c| c as f64 / (inside.max(1) as f64 * bin_w)).collect();
    let inv: Vec<f64> = (0..bins)
        .map(|b| {
            let y = image.lo + (b as f64 + 0.5) * bin_w;
            let orbit = pullback(model, &leaf.images, &shifts, r, y);
            let log_d: f64 = orbit[..r].iter().zip(&shifts).map(|(&x, &w)| model.lift(x + w).1.abs().ln()).sum();
            (-log_d).exp()
        })
        .collect();
    let mean = inv.iter().sum::<f64>() / bins as f64;
    let oracle: Vec<f64> = inv.iter().map(|v| v / mean).collect();
    let spread = |v: &[f64]| {
        let nz = v.iter().copied().filter(|&x| x > 0.0);
        let (mn, mx) = nz.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
        mx / mn
    };
    let ratio = spread(&density);
    let bound = distortion_bound(model, image.len(), k2);
    Ok(DensityProfile {
        steps: r,
        samples,
        omega_lo: (lo - start).to_f64(),
        omega_hi: (hi - start).to_f64(),
        image,
        counts,
        oracle_ratio: spread(&oracle),
        density,
        oracle,
        ratio,
        bound,
        outside,
        pass: ratio <= bound,
    })
}
