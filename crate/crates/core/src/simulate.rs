//! The Markov chain `X_{n+1} = f(X_n + ω_n)`: Lyapunov estimates, empirical
//! stationary measures and the free/bound/deep decomposition of the
//! log-derivative sum.

use std::collections::VecDeque;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::noise::NoiseStream;
use crate::phase_space::{classify, CircleMap, PhasePartition, Region};
use crate::symbolic::{run_unchecked, ProcessMode, SymbolicError, Variant};

pub const DEFAULT_BURN: usize = 10_000;
pub const BLOCK_LEN: usize = 1_000;
pub const MIN_LYAPUNOV_STEPS: usize = 10_000;
pub const MIN_BATCH_STEPS: usize = 1_000;

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("histograms have {0} and {1} bins")]
    BinMismatch(usize, usize),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error("trajectory sink: {0}")]
    Io(#[from] io::Error),
}

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        // an infinite term leaves a NaN compensation behind
        if self.sum.is_infinite() {
            self.sum
        } else {
            self.sum + self.comp
        }
    }
}

/// Receives `X_0` and then `X_{i+1}` after every step.
pub trait TrajectorySink {
    fn record(&mut self, x: f64) -> io::Result<()>;
}

/// Little-endian f64 stream.
pub struct BinaryTrajectory<W: Write>(pub W);

impl<W: Write> TrajectorySink for BinaryTrajectory<W> {
    fn record(&mut self, x: f64) -> io::Result<()> {
        self.0.write_all(&x.to_le_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub x: f64,
    pub n: usize,
    /// `Σ ln|f'(X_i + ω_i)|`; `−∞` once a derivative is exactly zero.
    pub logderiv_sum: f64,
    /// First step whose derivative was exactly zero.
    pub zero_derivative_at: Option<usize>,
    /// Most recent region labels of `X_i + ω_i`, oldest first.
    pub region_trace: Option<Vec<Region>>,
}

impl ChainState {
    pub fn zero_derivative_hit(&self) -> bool {
        self.zero_derivative_at.is_some()
    }
}

/// Optional extras for [`run_chain_with`].
#[derive(Default)]
pub struct ChainOptions<'a> {
    /// Partition and ring-buffer length for the region trace.
    pub trace: Option<(&'a PhasePartition, usize)>,
    pub sink: Option<&'a mut dyn TrajectorySink>,
}

pub fn run_chain(map: &CircleMap, epsilon: f64, stream: &mut NoiseStream, x0: f64, n: usize) -> Result<ChainState, SimulateError> {
    run_chain_with(map, epsilon, stream, x0, n, ChainOptions::default())
}

pub fn run_chain_with(
    map: &CircleMap,
    epsilon: f64,
    stream: &mut NoiseStream,
    x0: f64,
    n: usize,
    mut opts: ChainOptions<'_>,
) -> Result<ChainState, SimulateError> {
    if n == 0 {
        return Err(SimulateError::InvalidInput("n must be at least 1".into()));
    }
    let mut trace = opts.trace.map(|(_, len)| VecDeque::with_capacity(len));
    if let Some(sink) = opts.sink.as_deref_mut() {
        sink.record(x0)?;
    }
    let mut x = x0;
    let mut sum = NeumaierSum::default();
    let mut zero_at = None;
    for i in 0..n {
        let w = stream.draw(epsilon);
        let v = map.eval(x, w);
        if v.derivative == 0.0 && zero_at.is_none() {
            zero_at = Some(i);
        }
        sum.add(v.derivative.abs().ln());
        if let (Some(buf), Some((part, len))) = (trace.as_mut(), opts.trace) {
            if buf.len() == len {
                buf.pop_front();
            }
            buf.push_back(classify(part, x, w));
        }
        x = v.circle;
        if let Some(sink) = opts.sink.as_deref_mut() {
            sink.record(x)?;
        }
    }
    Ok(ChainState { x, n, logderiv_sum: sum.value(), zero_derivative_at: zero_at, region_trace: trace.map(Vec::from) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Nats per step, averaged over included chains.
    pub mean: f64,
    /// Sample std of block means over √(number of blocks).
    pub std_error: f64,
    pub n_steps: usize,
    pub n_burn: usize,
    pub n_chains: usize,
    /// Chains dropped after an exactly-zero derivative.
    pub excluded: usize,
    pub blocks: usize,
    pub chain_means: Vec<f64>,
}

struct ChainBlocks {
    mean: f64,
    block_means: Vec<f64>,
    zero: bool,
}

fn chain_blocks(map: &CircleMap, epsilon: f64, mut s: NoiseStream, x0: f64, n_burn: usize, n_steps: usize) -> ChainBlocks {
    let mut x = x0;
    let mut zero = false;
    for _ in 0..n_burn {
        let v = map.eval(x, s.draw(epsilon));
        zero |= v.derivative == 0.0;
        x = v.circle;
    }
    let mut total = NeumaierSum::default();
    let mut block = NeumaierSum::default();
    let mut block_means = Vec::with_capacity(n_steps / BLOCK_LEN);
    for i in 0..n_steps {
        let v = map.eval(x, s.draw(epsilon));
        zero |= v.derivative == 0.0;
        let t = v.derivative.abs().ln();
        total.add(t);
        block.add(t);
        if (i + 1) % BLOCK_LEN == 0 {
            block_means.push(block.value() / BLOCK_LEN as f64);
            block = NeumaierSum::default();
        }
        x = v.circle;
    }
    ChainBlocks { mean: total.value() / n_steps as f64, block_means, zero }
}

/// Chains run on `substream(stream, i)` for `i < n_chains`.
pub fn lyapunov_estimate(
    map: &CircleMap,
    epsilon: f64,
    stream: &NoiseStream,
    x0: f64,
    n_burn: usize,
    n_steps: usize,
    n_chains: usize,
) -> Result<LyapunovEstimate, SimulateError> {
    if n_steps < MIN_LYAPUNOV_STEPS {
        return Err(SimulateError::InvalidInput(format!("n_steps must be at least {MIN_LYAPUNOV_STEPS}")));
    }
    if n_chains == 0 {
        return Err(SimulateError::InvalidInput("n_chains must be at least 1".into()));
    }
    let runs: Vec<ChainBlocks> = (0..n_chains)
        .into_par_iter()
        .map(|i| chain_blocks(map, epsilon, stream.substream(i as u64), x0, n_burn, n_steps))
        .collect();
    let excluded = runs.iter().filter(|r| r.zero).count();
    let kept: Vec<&ChainBlocks> = runs.iter().filter(|r| !r.zero).collect();
    if kept.is_empty() {
        return Ok(LyapunovEstimate {
            mean: f64::NEG_INFINITY,
            std_error: f64::NAN,
            n_steps,
            n_burn,
            n_chains,
            excluded,
            blocks: 0,
            chain_means: runs.iter().map(|r| r.mean).collect(),
        });
    }
    let mean = kept.iter().map(|r| r.mean).sum::<f64>() / kept.len() as f64;
    let blocks: Vec<f64> = kept.iter().flat_map(|r| r.block_means.iter().copied()).collect();
    let nb = blocks.len();
    let std_error = if nb >= 2 {
        let bm = blocks.iter().sum::<f64>() / nb as f64;
        let var = blocks.iter().map(|b| (b - bm) * (b - bm)).sum::<f64>() / (nb - 1) as f64;
        (var / nb as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(LyapunovEstimate {
        mean,
        std_error,
        n_steps,
        n_burn,
        n_chains,
        excluded,
        blocks: nb,
        chain_means: runs.iter().map(|r| r.mean).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub bins: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl EmpiricalMeasure {
    pub fn bin_width(&self) -> f64 {
        1.0 / self.bins as f64
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Index of the bin containing a circle point.
    pub fn bin_of(&self, x: f64) -> usize {
        ((x * self.bins as f64) as usize).min(self.bins - 1)
    }
}

/// Histogram of `X_n` for `n_burn < n ≤ n_burn + n_steps`.
pub fn empirical_measure(
    map: &CircleMap,
    epsilon: f64,
    stream: &mut NoiseStream,
    x0: f64,
    n_burn: usize,
    n_steps: usize,
    bins: usize,
) -> Result<EmpiricalMeasure, SimulateError> {
    if bins < 10 {
        return Err(SimulateError::InvalidInput("bins must be at least 10".into()));
    }
    let mut m = EmpiricalMeasure { bins, counts: vec![0; bins], total: 0 };
    let mut x = x0;
    for _ in 0..n_burn {
        x = map.eval(x, stream.draw(epsilon)).circle;
    }
    for _ in 0..n_steps {
        x = map.eval(x, stream.draw(epsilon)).circle;
        let b = m.bin_of(x);
        m.counts[b] += 1;
    }
    m.total = n_steps as u64;
    Ok(m)
}

/// `½ Σ |p_i − q_i|` over normalised histograms.
pub fn tv_distance(m1: &EmpiricalMeasure, m2: &EmpiricalMeasure) -> Result<f64, SimulateError> {
    if m1.bins != m2.bins {
        return Err(SimulateError::BinMismatch(m1.bins, m2.bins));
    }
    if m1.total == 0 || m2.total == 0 {
        return Err(SimulateError::InvalidInput("empty histogram".into()));
    }
    let d: f64 = m1.probabilities().iter().zip(m2.probabilities()).map(|(p, q)| (p - q).abs()).sum();
    Ok((0.5 * d).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSum {
    pub t: usize,
    pub p: u32,
    /// `Σ T_i` over `t ≤ i ≤ t + p`, truncated at a deep visit or the end of the run.
    pub sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepTerm {
    pub tau: usize,
    pub term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentLedger {
    pub n: usize,
    pub free_sum: f64,
    pub bound_sums: Vec<BoundSum>,
    pub deep_terms: Vec<DeepTerm>,
    /// The chain's own log-derivative sum, accumulated independently of the split.
    pub logderiv_sum: f64,
}

impl ExponentLedger {
    /// `free + Σ bound + Σ deep`.
    pub fn total(&self) -> f64 {
        let mut s = NeumaierSum::default();
        s.add(self.free_sum);
        self.bound_sums.iter().for_each(|b| s.add(b.sum));
        self.deep_terms.iter().for_each(|d| s.add(d.term));
        s.value()
    }

    pub fn relative_gap(&self) -> f64 {
        (self.total() - self.logderiv_sum).abs() / self.logderiv_sum.abs().max(1.0)
    }

    /// `T_{τ_1}`.
    pub fn first_deep(&self) -> Option<f64> {
        self.deep_terms.first().map(|d| d.term)
    }

    /// `T_{τ_j}` for `j ≥ 2`.
    pub fn later_deep(&self) -> &[DeepTerm] {
        self.deep_terms.get(1..).unwrap_or(&[])
    }
}

/// Labels each step of a chain free, bound or deep by the supporting-interval
/// process and splits the log-derivative sum accordingly. The chain consumes the
/// stream exactly as [`run_chain`] does, plus one lookahead draw.
pub fn exponent_ledger(model: &Model, stream: &mut NoiseStream, x0: f64, n: usize) -> Result<ExponentLedger, SimulateError> {
    if model.params.k < 1 {
        return Err(SimulateError::InvalidInput("the ledger needs k ≥ 1".into()));
    }
    if n == 0 {
        return Err(SimulateError::InvalidInput("n must be at least 1".into()));
    }
    // at ε = 0 the supporting interval is the chain point itself
    let st = run_unchecked(model, stream, x0, n, Variant::Sec5)?;
    let mut free = NeumaierSum::default();
    let mut all = NeumaierSum::default();
    let mut bound_sums: Vec<BoundSum> = Vec::new();
    let mut open: Option<NeumaierSum> = None;
    let mut deep_terms = Vec::new();
    let mut starts = st.bound_periods.iter().peekable();
    let close = |open: &mut Option<NeumaierSum>, sums: &mut Vec<BoundSum>| {
        if let (Some(acc), Some(last)) = (open.take(), sums.last_mut()) {
            last.sum = acc.value();
        }
    };
    for r in &st.steps {
        let t = r.log_deriv.expect("sec5 records derivatives");
        all.add(t);
        match r.mode {
            ProcessMode::Bound { remaining } => {
                if starts.next_if(|&&(tj, _)| tj == r.n).is_some() {
                    close(&mut open, &mut bound_sums);
                    bound_sums.push(BoundSum { t: r.n, p: remaining, sum: 0.0 });
                    open = Some(NeumaierSum::default());
                }
                open.as_mut().expect("bound steps follow a bound start").add(t);
            }
            mode => {
                close(&mut open, &mut bound_sums);
                if mode == ProcessMode::Deep && r.n > 0 {
                    deep_terms.push(DeepTerm { tau: r.n, term: t });
                } else {
                    free.add(t);
                }
            }
        }
    }
    close(&mut open, &mut bound_sums);
    Ok(ExponentLedger { n, free_sum: free.value(), bound_sums, deep_terms, logderiv_sum: all.value() })
}

/// `(1/n) Σ ln|f'|` from each start, start `i` on `substream(stream, i)`.
pub fn finite_time_exponent_batch(
    map: &CircleMap,
    epsilon: f64,
    stream: &NoiseStream,
    x0_list: &[f64],
    n: usize,
) -> Result<Vec<f64>, SimulateError> {
    if n < MIN_BATCH_STEPS {
        return Err(SimulateError::InvalidInput(format!("n must be at least {MIN_BATCH_STEPS}")));
    }
    x0_list
        .par_iter()
        .enumerate()
        .map(|(i, &x0)| {
            let mut s = stream.substream(i as u64);
            run_chain(map, epsilon, &mut s, x0, n).map(|c| c.logderiv_sum / n as f64)
        })
        .collect()
}
