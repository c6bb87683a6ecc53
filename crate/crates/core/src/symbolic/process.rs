//! The two random interval processes.
//!
//! `Sec3` grows `J_i` by the map and keeps the longest piece of the shifted
//! region partition, stopping once the image is long (σ₁) or the kept piece
//! lies in `Bᵏ` (σ₂). `Sec5` follows a chain and keeps the atom of the shifted
//! itinerary partition containing the chain, resetting to a fresh noise window
//! after every `Bᵏ` encounter.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Interval, SymbolicError};
use crate::model::Model;
use crate::noise::{NoiseStream, StreamId};
use crate::phase_space::Region;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sec3,
    Sec5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessMode {
    Free,
    /// Inside a bound period; `remaining` counts down to 0 at its last step.
    Bound { remaining: u32 },
    /// The interval meets `Bᵏ`.
    Deep,
}

impl fmt::Display for ProcessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessMode::Free => write!(f, "free"),
            ProcessMode::Bound { remaining } => write!(f, "bound({remaining})"),
            ProcessMode::Deep => write!(f, "deep"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    /// Length of the uncut image this interval was selected from.
    pub pre_len: f64,
    pub mode: ProcessMode,
    pub region: Region,
    /// Whether the interval is a proper piece of its image.
    pub cut: bool,
    /// Chain position `X̃_n` and `T_n = ln|f̃'(X_n + ω_n)|` (`Sec5` only).
    pub point: Option<f64>,
    pub log_deriv: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Image longer than `L^{-β}`, reached at step `n` before cutting.
    Sigma1 { n: usize },
    /// Kept piece inside `Bᵏ` at step `n`.
    Sigma2 { n: usize },
    MaxSteps,
}

/// Step indices at which an invariant failed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessViolations {
    pub cut_ratio: Vec<usize>,
    pub free_growth: Vec<usize>,
    pub bound_growth: Vec<usize>,
    pub cut_during_bound: Vec<usize>,
    pub deep_during_bound: Vec<usize>,
    /// Cuts with ratio in `[κ, 1/5)`, only possible when `K1 > 5`.
    pub kappa_gap: Vec<usize>,
}

impl ProcessViolations {
    pub fn total(&self) -> usize {
        self.cut_ratio.len()
            + self.free_growth.len()
            + self.bound_growth.len()
            + self.cut_during_bound.len()
            + self.deep_during_bound.len()
    }
}

/// Smallest observed value of each checked quantity divided by its bound; `∞` when never checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessMargins {
    pub cut_ratio: f64,
    pub free_growth: f64,
    pub bound_growth: f64,
    pub cuts_checked: usize,
    pub free_steps_checked: usize,
    pub bound_exits_checked: usize,
}

impl Default for ProcessMargins {
    fn default() -> Self {
        ProcessMargins {
            cut_ratio: f64::INFINITY,
            free_growth: f64::INFINITY,
            bound_growth: f64::INFINITY,
            cuts_checked: 0,
            free_steps_checked: 0,
            bound_exits_checked: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalProcessState {
    pub variant: Variant,
    pub stream: StreamId,
    pub kappa: f64,
    pub steps: Vec<StepRecord>,
    /// Steps `n > 0` at which the interval met `Bᵏ`.
    pub tau: Vec<usize>,
    /// `(t_j, p_j)` for every bound period initiated.
    pub bound_periods: Vec<(usize, u32)>,
    pub stop: StopReason,
    pub violations: ProcessViolations,
    pub margins: ProcessMargins,
}

impl IntervalProcessState {
    /// Current interval.
    pub fn current(&self) -> Interval {
        let s = self.steps.last().expect("histories are nonempty");
        Interval::new(s.lo, s.hi)
    }

    /// CSV with columns `n,lo,hi,mode,region,cut_flag`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "lo", "hi", "mode", "region", "cut_flag"])?;
        for s in &self.steps {
            out.write_record([
                s.n.to_string(),
                format!("{:.16e}", s.lo),
                format!("{:.16e}", s.hi),
                s.mode.to_string(),
                s.region.to_string(),
                s.cut.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Open bound window `(t_j, p_j)` covering step `n` (`t_j < n ≤ t_j + p_j`).
fn window(bound: Option<(usize, u32)>, n: usize) -> Option<(usize, u32)> {
    bound.filter(|&(t, p)| n > t && n <= t + p as usize)
}

pub fn run_interval_process(
    model: &Model,
    stream: &mut NoiseStream,
    x0: f64,
    n_max: usize,
    variant: Variant,
) -> Result<IntervalProcessState, SymbolicError> {
    if model.params.epsilon <= 0.0 {
        return Err(SymbolicError::Precondition("interval processes need ε > 0".into()));
    }
    if Interval::around(x0, model.params.epsilon).is_empty() {
        return Err(SymbolicError::Precondition(format!("x0 ± ε is degenerate in f64 at x0 = {x0}")));
    }
    run_unchecked(model, stream, x0, n_max, variant)
}

/// As [`run_interval_process`] but accepts `ε = 0`, where the sec5 interval is the
/// degenerate point `[X̃_n, X̃_n]` and labels reduce to the point's own region.
pub(crate) fn run_unchecked(
    model: &Model,
    stream: &mut NoiseStream,
    x0: f64,
    n_max: usize,
    variant: Variant,
) -> Result<IntervalProcessState, SymbolicError> {
    if n_max < 1 {
        return Err(SymbolicError::Precondition("n_max must be at least 1".into()));
    }
    let mut state = IntervalProcessState {
        variant,
        stream: stream.id(),
        kappa: model.kappa(),
        steps: Vec::new(),
        tau: Vec::new(),
        bound_periods: Vec::new(),
        stop: StopReason::MaxSteps,
        violations: ProcessViolations::default(),
        margins: ProcessMargins::default(),
    };
    match variant {
        Variant::Sec3 => run_sec3(model, stream, x0, n_max, &mut state),
        Variant::Sec5 => run_sec5(model, stream, x0, n_max, &mut state),
    }
    Ok(state)
}

fn run_sec3(model: &Model, stream: &mut NoiseStream, x0: f64, n_max: usize, st: &mut IntervalProcessState) {
    let p = &model.params;
    let k = p.k;
    let eps = p.epsilon;
    let kappa = st.kappa;
    let long = p.lpow(-p.beta);
    let free_factor = kappa * p.lpow(0.5 - p.beta);

    let mut j = Interval::around(x0, eps);
    let mut shift = 0.0;
    let mut label = model.partition.deepest_label(j.lo, j.hi, 0.0);
    let mut cut = false;
    let mut pre_len = j.len();
    let mut bound: Option<(usize, u32)> = None;
    let mut bound_start_len = 0.0;

    for i in 0..=n_max {
        let open = window(bound, i);
        if open.is_some() && cut {
            st.violations.cut_during_bound.push(i);
        }
        if let Some((t, pj)) = bound {
            if i == t + pj as usize + 1 {
                let need = kappa * p.lpow((0.5 - p.beta) * (pj as f64 + 1.0)) * bound_start_len;
                let r = j.len() / need;
                st.margins.bound_growth = st.margins.bound_growth.min(r);
                st.margins.bound_exits_checked += 1;
                if r < 1.0 {
                    st.violations.bound_growth.push(i);
                }
                bound = None;
            }
        }
        let mode = if label == Region::B(k) {
            if open.is_some() {
                st.violations.deep_during_bound.push(i);
            }
            ProcessMode::Deep
        } else if let Some((t, pj)) = open {
            ProcessMode::Bound { remaining: (t + pj as usize - i) as u32 }
        } else if label.depth() >= 1 {
            bound = Some((i, label.depth()));
            bound_start_len = j.len();
            st.bound_periods.push((i, label.depth()));
            ProcessMode::Bound { remaining: label.depth() }
        } else {
            ProcessMode::Free
        };
        st.steps.push(StepRecord {
            n: i,
            lo: j.lo,
            hi: j.hi,
            pre_len,
            mode,
            region: label,
            cut,
            point: None,
            log_deriv: None,
        });
        if mode == ProcessMode::Deep {
            st.stop = StopReason::Sigma2 { n: i };
            return;
        }
        if i == n_max {
            st.stop = StopReason::MaxSteps;
            return;
        }

        let img = model.image(j, shift);
        let omega = stream.draw(eps);
        if img.len() > long {
            st.stop = StopReason::Sigma1 { n: i + 1 };
            return;
        }
        let mut pieces = model.partition.region_pieces(img.lo, img.hi, omega);
        if pieces.is_empty() {
            // image collapsed below f64 resolution
            pieces.push((img.lo, img.hi, model.partition.deepest_label(img.lo, img.hi, omega)));
        }
        let mut best = pieces[0];
        for &piece in &pieces[1..] {
            // ties go to the rightmost piece
            if piece.1 - piece.0 >= best.1 - best.0 {
                best = piece;
            }
        }
        let next = Interval::new(best.0, best.1);
        cut = pieces.len() > 1;
        if cut {
            let r = next.len() / img.len();
            st.margins.cut_ratio = st.margins.cut_ratio.min(r / kappa);
            st.margins.cuts_checked += 1;
            if r < kappa {
                st.violations.cut_ratio.push(i + 1);
            } else if r < 0.2 {
                st.violations.kappa_gap.push(i + 1);
            }
        }
        if mode == ProcessMode::Free {
            let r = next.len() / (free_factor * j.len());
            st.margins.free_growth = st.margins.free_growth.min(r);
            st.margins.free_steps_checked += 1;
            if r < 1.0 {
                st.violations.free_growth.push(i + 1);
            }
        }
        pre_len = img.len();
        j = next;
        label = best.2;
        shift = omega;
    }
}

fn run_sec5(model: &Model, stream: &mut NoiseStream, x0: f64, n_max: usize, st: &mut IntervalProcessState) {
    let eps = model.params.epsilon;
    let k = model.params.k;
    let mut x = x0;
    let mut xl = x0;
    let mut omega = stream.draw(eps);
    let mut iv = Interval::around(x0, eps);
    let mut fresh = true;
    let mut cut = false;
    let mut pre_len = iv.len();
    let mut bound: Option<(usize, u32)> = None;

    for n in 0..n_max {
        // a fresh window already contains the noise of this step
        let s = if fresh { 0.0 } else { omega };
        let label = model.partition.deepest_label(iv.lo, iv.hi, s);
        let open = window(bound, n);
        if open.is_some() && cut {
            st.violations.cut_during_bound.push(n);
        }
        let mode = if label == Region::B(k) {
            if open.is_some() {
                st.violations.deep_during_bound.push(n);
            }
            bound = None;
            ProcessMode::Deep
        } else if let Some((t, pj)) = open {
            ProcessMode::Bound { remaining: (t + pj as usize - n) as u32 }
        } else if label.depth() >= 1 {
            bound = Some((n, label.depth()));
            st.bound_periods.push((n, label.depth()));
            ProcessMode::Bound { remaining: label.depth() }
        } else {
            ProcessMode::Free
        };

        let mv = model.map.eval(x, omega);
        let omega_next = stream.draw(eps);
        st.steps.push(StepRecord {
            n,
            lo: iv.lo,
            hi: iv.hi,
            pre_len,
            mode,
            region: label,
            cut,
            point: Some(xl),
            log_deriv: Some(mv.derivative.abs().ln()),
        });

        if mode == ProcessMode::Deep {
            if n > 0 {
                st.tau.push(n);
            }
            iv = Interval::around(mv.lift, eps);
            pre_len = iv.len();
            fresh = true;
            cut = false;
        } else {
            let img = model.image(iv, s);
            let next = model.fine.atom_containing(omega_next, img, mv.lift);
            cut = next != img;
            pre_len = img.len();
            iv = next;
            fresh = false;
        }
        x = mv.circle;
        xl = mv.lift;
        omega = omega_next;
    }
}
