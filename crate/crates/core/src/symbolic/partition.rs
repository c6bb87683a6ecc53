//! The itinerary partition P and the merge rule P_ω(I).
//!
//! P is stored implicitly: each region arc of one period carries a count `m`
//! of equal atoms, and atoms are addressed by a global integer index running
//! over all periods of the lift. Atom `g` is `[boundary(g), boundary(g + 1))`.

use serde::{Deserialize, Serialize};

use super::{Interval, SymbolicError};
use crate::phase_space::{PhasePartition, Region, SystemParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePartitionP {
    /// Arc boundaries of one period, `cuts[0] = base`, `cuts[n] = base + 1`.
    pub cuts: Vec<f64>,
    pub labels: Vec<Region>,
    /// Atoms per arc.
    pub counts: Vec<u64>,
    /// `prefix[i] = Σ_{j<i} counts[j]`.
    pub prefix: Vec<u64>,
    pub per_period: u64,
    /// `u_l = (l+1)⁻² L^{-(l+3)/2-β}` for `l < k`.
    pub unit: Vec<f64>,
}

impl BasePartitionP {
    #[inline]
    pub fn base(&self) -> f64 {
        self.cuts[0]
    }

    #[inline]
    fn arc_of_rank(&self, r: u64) -> usize {
        self.prefix.partition_point(|&x| x <= r) - 1
    }

    /// Left endpoint of atom `g` in the lift.
    pub fn boundary(&self, g: i64) -> f64 {
        let m = self.per_period as i64;
        let p = g.div_euclid(m);
        let r = g.rem_euclid(m) as u64;
        let arc = self.arc_of_rank(r);
        let j = r - self.prefix[arc];
        let off = if j == 0 {
            self.cuts[arc]
        } else {
            let len = self.cuts[arc + 1] - self.cuts[arc];
            self.cuts[arc] + len * (j as f64 / self.counts[arc] as f64)
        };
        p as f64 + off
    }

    pub fn label(&self, g: i64) -> Region {
        let r = g.rem_euclid(self.per_period as i64) as u64;
        self.labels[self.arc_of_rank(r)]
    }

    pub fn atom(&self, g: i64) -> Interval {
        Interval { lo: self.boundary(g), hi: self.boundary(g + 1) }
    }

    /// Index `g` with `boundary(g) ≤ y < boundary(g + 1)`.
    pub fn locate(&self, y: f64) -> i64 {
        let base = self.base();
        let p = (y - base).floor();
        let t = y - p;
        let arc = self.cuts.partition_point(|&c| c <= t).clamp(1, self.labels.len()) - 1;
        let len = self.cuts[arc + 1] - self.cuts[arc];
        let m = self.counts[arc];
        let j = (((t - self.cuts[arc]) / len) * m as f64).floor().clamp(0.0, (m - 1) as f64) as u64;
        let mut g = p as i64 * self.per_period as i64 + (self.prefix[arc] + j) as i64;
        while y < self.boundary(g) {
            g -= 1;
        }
        while y >= self.boundary(g + 1) {
            g += 1;
        }
        g
    }

    /// Index `j` with `boundary(j) − ω ≤ x < boundary(j+1) − ω`, in shifted coordinates.
    fn locate_shifted(&self, x: f64, omega: f64) -> i64 {
        let mut g = self.locate(x + omega);
        while x < self.boundary(g) - omega {
            g -= 1;
        }
        while x >= self.boundary(g + 1) - omega {
            g += 1;
        }
        g
    }

    /// First and last indices of atoms meeting `iv` (shifted by `−ω`) in a set of positive length.
    pub fn span(&self, omega: f64, iv: Interval) -> (i64, i64) {
        let first = self.locate_shifted(iv.lo, omega);
        let mut last = self.locate_shifted(iv.hi, omega);
        if last > first && self.boundary(last) - omega >= iv.hi {
            last -= 1;
        }
        (first, last)
    }

    /// Number of atoms of `P_ω(I)`.
    pub fn refine_len(&self, omega: f64, iv: Interval) -> u64 {
        let (a, b) = self.span(omega, iv);
        let n = (b - a + 1) as u64;
        if n <= 3 {
            1
        } else {
            n - 2
        }
    }

    /// The atoms of `P_ω(I)`, refusing to materialise more than `max_atoms`.
    pub fn refine(&self, omega: f64, iv: Interval, max_atoms: u64) -> Result<Vec<Interval>, SymbolicError> {
        let (a, b) = self.span(omega, iv);
        let n = (b - a + 1) as u64;
        if n <= 3 {
            return Ok(vec![iv]);
        }
        if n - 2 > max_atoms {
            return Err(SymbolicError::TooManyAtoms { atoms: n - 2, cap: max_atoms });
        }
        let sb = |j: i64| self.boundary(j) - omega;
        let mut out = Vec::with_capacity((n - 2) as usize);
        out.push(Interval { lo: iv.lo, hi: sb(a + 2) });
        for j in a + 2..=b - 2 {
            out.push(Interval { lo: sb(j), hi: sb(j + 1) });
        }
        out.push(Interval { lo: sb(b - 1), hi: iv.hi });
        Ok(out)
    }

    /// The atom of `P_ω(I)` containing `x` (clamped into `I`).
    pub fn atom_containing(&self, omega: f64, iv: Interval, x: f64) -> Interval {
        let (a, b) = self.span(omega, iv);
        if b - a < 3 {
            return iv;
        }
        let x = x.clamp(iv.lo, iv.hi);
        let j = self.locate_shifted(x, omega).clamp(a, b);
        let sb = |j: i64| self.boundary(j) - omega;
        if j <= a + 1 {
            Interval { lo: iv.lo, hi: sb(a + 2) }
        } else if j >= b - 1 {
            Interval { lo: sb(b - 1), hi: iv.hi }
        } else {
            Interval { lo: sb(j), hi: sb(j + 1) }
        }
    }

    /// Atoms of one period whose arcs carry `label`, as `(arc index, count, atom length)`.
    pub fn arcs_with_label(&self, label: Region) -> Vec<(usize, u64, f64)> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == label)
            .map(|i| (i, self.counts[i], (self.cuts[i + 1] - self.cuts[i]) / self.counts[i] as f64))
            .collect()
    }
}

/// Equal subdivision of every `B^l` arc (`l < k`) into `⌈len / 2u_l⌉` atoms.
pub fn build_p(partition: &PhasePartition, params: &SystemParams) -> Result<BasePartitionP, SymbolicError> {
    let k = partition.k;
    let unit: Vec<f64> = (0..k)
        .map(|l| params.lpow(-(l as f64 + 3.0) / 2.0 - params.beta) / ((l + 1) as f64).powi(2))
        .collect();
    let mut cuts = Vec::with_capacity(partition.arcs.len() + 1);
    let mut labels = Vec::with_capacity(partition.arcs.len());
    let mut counts = Vec::with_capacity(partition.arcs.len());
    for arc in &partition.arcs {
        cuts.push(arc.lo);
        labels.push(arc.label);
        let len = arc.hi - arc.lo;
        let m = match arc.label {
            Region::B(l) if l < k => {
                let u = unit[l as usize];
                let m = (len / (2.0 * u)).ceil().max(1.0);
                let piece = len / m;
                if len < u || piece < u || piece > 2.0 * u {
                    return Err(SymbolicError::BracketViolation { level: l, length: len, unit: u });
                }
                m as u64
            }
            _ => 1,
        };
        counts.push(m);
    }
    cuts.push(partition.arcs[0].lo + 1.0);
    let mut prefix = Vec::with_capacity(counts.len() + 1);
    let mut acc = 0u64;
    prefix.push(0);
    for &m in &counts {
        acc += m;
        prefix.push(acc);
    }
    Ok(BasePartitionP { cuts, labels, counts, prefix, per_period: acc, unit })
}

/// `P_ω(I)`; fails if more than `max_atoms` atoms would be produced.
pub fn refine_on_interval(
    p: &BasePartitionP,
    omega: f64,
    iv: Interval,
    max_atoms: u64,
) -> Result<Vec<Interval>, SymbolicError> {
    p.refine(omega, iv, max_atoms)
}

/// `p(I)`: the deepest level met by `I + ω` (0 on `G ∪ I`, `l` on `B^l`).
pub fn bound_period(partition: &PhasePartition, iv: Interval, omega: f64) -> u32 {
    partition.deepest_label(iv.lo, iv.hi, omega).depth()
}
