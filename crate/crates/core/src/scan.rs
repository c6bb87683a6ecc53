//! Parallel parameter sweeps over `(a, ε, k, c)`.
//!
//! Cell `i` draws all of its randomness from `NoiseStream::new(seed).substream(i)`,
//! so rows are bitwise independent of worker count and scheduling order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::{at_least, check_h3, thresholds, DEFAULT_GRID};
use crate::noise::NoiseStream;
use crate::phase_space::{compute_derived_constants, CircleMap, DerivedConstants, PhaseError, PsiSpec, SystemParams};
use crate::simulate::{empirical_measure, finite_time_exponent_batch, lyapunov_estimate, tv_distance};

pub const DEFAULT_CELL_CAP: usize = 1_000_000;
pub const MANIFEST_SCHEMA: &str = "scan_manifest_v1";
pub const CSV_HEADER: &str = "cell_index,a,epsilon,k,c,h3_pass,k_max,min_dist,lyap_mean,lyap_se,tv,flags";

/// Substream indices inside a cell.
const LYAP_STREAM: u64 = 0;
const TV_STREAMS: (u64, u64) = (1, 2);
const SINK_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid scan spec: {0}")]
    Spec(String),
    #[error("{cells} cells exceed the cap of {cap}")]
    TooManyCells { cells: usize, cap: usize },
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("no rows to write")]
    EmptyRows,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanParam {
    A,
    Epsilon,
    K,
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: ScanParam,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    /// Log for ε, linear otherwise, when absent.
    #[serde(default)]
    pub spacing: Option<Spacing>,
}

impl Axis {
    pub fn spacing(&self) -> Spacing {
        self.spacing.unwrap_or(if self.param == ScanParam::Epsilon { Spacing::Log } else { Spacing::Linear })
    }

    /// Endpoints included; a single point sits at `min`.
    pub fn values(&self) -> Vec<f64> {
        let n = self.count;
        let t = |i: usize| if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
        match self.spacing() {
            Spacing::Linear => (0..n).map(|i| self.min + (self.max - self.min) * t(i)).collect(),
            Spacing::Log => {
                let (l0, l1) = (self.min.ln(), self.max.ln());
                (0..n).map(|i| (l0 + (l1 - l0) * t(i)).exp()).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    pub n_steps: usize,
    pub n_burn: usize,
    pub n_chains: usize,
    pub bins: usize,
    pub x0: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { n_steps: 100_000, n_burn: 10_000, n_chains: 4, bins: 100, x0: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub criterion: bool,
    pub lyapunov: bool,
    pub tv: bool,
    pub sink_scan: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs { criterion: true, lyapunov: true, tv: false, sink_scan: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub base: SystemParams,
    pub psi: PsiSpec,
    pub axes: Vec<Axis>,
    pub budgets: Budgets,
    pub outputs: Outputs,
    pub seed: u64,
    pub cell_cap: usize,
    /// Grid for the derived constants of ψ.
    pub grid: usize,
}

impl ScanSpec {
    pub fn new(base: SystemParams, psi: PsiSpec, axes: Vec<Axis>, seed: u64) -> Self {
        ScanSpec {
            base,
            psi,
            axes,
            budgets: Budgets::default(),
            outputs: Outputs::default(),
            seed,
            cell_cap: DEFAULT_CELL_CAP,
            grid: DEFAULT_GRID,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let bad = |m: String| Err(ScanError::Spec(m));
        for ax in &self.axes {
            if ax.count == 0 {
                return bad(format!("axis {:?} has count 0", ax.param));
            }
            if !(ax.min.is_finite() && ax.max.is_finite()) {
                return bad(format!("axis {:?} bounds must be finite", ax.param));
            }
            if ax.spacing() == Spacing::Log && !(ax.min > 0.0 && ax.max > 0.0) {
                return bad(format!("log axis {:?} needs positive bounds", ax.param));
            }
        }
        let b = &self.budgets;
        if b.n_steps == 0 || b.n_chains == 0 || b.bins == 0 {
            return bad("budgets must be positive".into());
        }
        let cells = self.cell_count();
        if cells > self.cell_cap {
            return Err(ScanError::TooManyCells { cells, cap: self.cell_cap });
        }
        Ok(())
    }

    /// Parameters of cell `index`; the first axis varies slowest.
    pub fn cell_params(&self, index: usize) -> SystemParams {
        let mut p = self.base;
        let mut rest = index;
        let mut coords = vec![0; self.axes.len()];
        for (i, ax) in self.axes.iter().enumerate().rev() {
            coords[i] = rest % ax.count;
            rest /= ax.count;
        }
        for (ax, &i) in self.axes.iter().zip(&coords) {
            let v = ax.values()[i];
            match ax.param {
                ScanParam::A => p.a = v,
                ScanParam::Epsilon => p.epsilon = v,
                ScanParam::K => p.k = v.round().max(0.0) as u32,
                ScanParam::C => p.c = v,
            }
        }
        p
    }
}

/// One cell; exactly the CSV columns. Numbers absent for skipped outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub cell_index: usize,
    pub a: f64,
    pub epsilon: f64,
    pub k: u32,
    pub c: f64,
    pub h3_pass: Option<bool>,
    pub k_max: Option<u32>,
    pub min_dist: Option<f64>,
    pub lyap_mean: Option<f64>,
    pub lyap_se: Option<f64>,
    pub tv: Option<f64>,
    /// `;`-separated tokens: threshold windows, sink evidence, excluded chains, errors.
    pub flags: String,
}

impl ScanRow {
    /// The stream this row drew from.
    pub fn stream(&self, seed: u64) -> NoiseStream {
        NoiseStream::new(seed).substream(self.cell_index as u64)
    }
}

fn run_cell(spec: &ScanSpec, constants: &DerivedConstants, index: usize) -> ScanRow {
    let p = spec.cell_params(index);
    let mut row = ScanRow {
        cell_index: index,
        a: p.a,
        epsilon: p.epsilon,
        k: p.k,
        c: p.c,
        h3_pass: None,
        k_max: None,
        min_dist: None,
        lyap_mean: None,
        lyap_se: None,
        tv: None,
        flags: String::new(),
    };
    let mut flags: Vec<String> = Vec::new();
    if let Err(e) = p.validate() {
        row.flags = format!("error:{e}");
        return row;
    }
    let stream = row.stream(spec.seed);
    let map = CircleMap::new(&p, &spec.psi);
    let b = &spec.budgets;

    let t = thresholds(&p);
    if p.epsilon <= t.eps_thm_a {
        flags.push("eps_le_thmA".into());
    }
    if at_least(p.epsilon, t.eps_thm_b) {
        flags.push("eps_ge_thmB".into());
    }
    if p.epsilon < t.eps_sink_max {
        flags.push("eps_lt_sink_cap".into());
    }

    if spec.outputs.criterion {
        let r = check_h3(&p, &spec.psi, constants, p.c, p.k);
        row.h3_pass = Some(r.pass);
        row.k_max = Some(r.k_max);
        row.min_dist = Some(r.min_dist);
    }
    if spec.outputs.lyapunov {
        match lyapunov_estimate(&map, p.epsilon, &stream.substream(LYAP_STREAM), b.x0, b.n_burn, b.n_steps, b.n_chains) {
            Ok(est) => {
                row.lyap_mean = Some(est.mean);
                row.lyap_se = Some(est.std_error);
                if est.excluded > 0 {
                    flags.push(format!("excluded={}", est.excluded));
                }
            }
            Err(e) => flags.push(format!("error:lyapunov:{e}")),
        }
    }
    if spec.outputs.tv {
        let run = |s: u64, x0: f64| {
            empirical_measure(&map, p.epsilon, &mut stream.substream(s), x0, b.n_burn, b.n_steps, b.bins)
        };
        match run(TV_STREAMS.0, 0.0).and_then(|m0| tv_distance(&m0, &run(TV_STREAMS.1, 0.5)?)) {
            Ok(d) => row.tv = Some(d),
            Err(e) => flags.push(format!("error:tv:{e}")),
        }
    }
    if spec.outputs.sink_scan {
        let next = check_h3(&p, &spec.psi, constants, p.c, p.k + 1);
        if !next.pass {
            flags.push("h3_next_fail".into());
        }
        match finite_time_exponent_batch(&map, p.epsilon, &stream.substream(SINK_STREAM), &constants.critical_set, b.n_steps) {
            Ok(ex) => {
                let m = ex.iter().copied().fold(f64::INFINITY, f64::min);
                flags.push(format!("sink_exp={m:.6e}"));
                if m < 0.0 {
                    flags.push("sink".into());
                }
            }
            Err(e) => flags.push(format!("error:sink:{e}")),
        }
    }
    row.flags = flags.join(";");
    row
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanManifest {
    pub schema: String,
    pub spec: ScanSpec,
    pub seed: u64,
    pub version: String,
    pub workers: usize,
    pub cells: usize,
    pub wall_time_s: f64,
}

/// Rows in cell order regardless of `workers`.
pub fn run_scan(spec: &ScanSpec, workers: usize) -> Result<(Vec<ScanRow>, ScanManifest), ScanError> {
    spec.validate()?;
    let start = Instant::now();
    let constants = compute_derived_constants(&spec.psi, spec.grid)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ScanError::Pool(e.to_string()))?;
    let cells = spec.cell_count();
    let rows: Vec<ScanRow> = pool.install(|| (0..cells).into_par_iter().map(|i| run_cell(spec, &constants, i)).collect());
    let manifest = ScanManifest {
        schema: MANIFEST_SCHEMA.into(),
        spec: spec.clone(),
        seed: spec.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        workers: workers.max(1),
        cells,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((rows, manifest))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

/// 17 significant digits, `inf`/`NaN` spelled as Rust parses them.
fn num(x: f64) -> String {
    if x.is_finite() { format!("{x:.16e}") } else { format!("{x}") }
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

/// The CSV payload line of a row, without newline.
pub fn csv_line(r: &ScanRow) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    w.write_record([
        r.cell_index.to_string(),
        num(r.a),
        num(r.epsilon),
        r.k.to_string(),
        num(r.c),
        opt(r.h3_pass, |b| b.to_string()),
        opt(r.k_max, |k| k.to_string()),
        opt(r.min_dist, num),
        opt(r.lyap_mean, num),
        opt(r.lyap_se, num),
        opt(r.tv, num),
        r.flags.clone(),
    ])
    .expect("writing to memory");
    let mut s = String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii record");
    s.pop();
    s
}

pub fn to_csv(rows: &[ScanRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", csv_line(r));
    }
    s
}

pub fn to_jsonl(rows: &[ScanRow]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("rows serialize") + "\n").collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScanError + '_ {
    move |source| ScanError::Io { path: path.to_path_buf(), source }
}

pub fn write_results(rows: &[ScanRow], format: Format, path: &Path) -> Result<(), ScanError> {
    if rows.is_empty() {
        return Err(ScanError::EmptyRows);
    }
    let body = match format {
        Format::Csv => to_csv(rows),
        Format::Jsonl => to_jsonl(rows),
    };
    fs::write(path, body).map_err(io_err(path))
}

pub fn write_manifest(manifest: &ScanManifest, path: &Path) -> Result<(), ScanError> {
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, body).map_err(io_err(path))
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<Option<T>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("bad {name} {s:?}"))
}

fn need<T>(v: Option<T>, name: &str) -> Result<T, String> {
    v.ok_or_else(|| format!("missing {name}"))
}

pub fn parse_csv(text: &str) -> Result<Vec<ScanRow>, String> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(format!("unexpected header {:?}", header.join(",")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(ScanRow {
            cell_index: need(parse_field(f(0), "cell_index")?, "cell_index")?,
            a: need(parse_field(f(1), "a")?, "a")?,
            epsilon: need(parse_field(f(2), "epsilon")?, "epsilon")?,
            k: need(parse_field(f(3), "k")?, "k")?,
            c: need(parse_field(f(4), "c")?, "c")?,
            h3_pass: parse_field(f(5), "h3_pass")?,
            k_max: parse_field(f(6), "k_max")?,
            min_dist: parse_field(f(7), "min_dist")?,
            lyap_mean: parse_field(f(8), "lyap_mean")?,
            lyap_se: parse_field(f(9), "lyap_se")?,
            tv: parse_field(f(10), "tv")?,
            flags: f(11).to_string(),
        });
    }
    Ok(rows)
}

pub fn read_results(path: &Path, format: Format) -> Result<Vec<ScanRow>, ScanError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse_err = |reason: String| ScanError::Parse { path: path.to_path_buf(), reason };
    match format {
        Format::Csv => parse_csv(&text).map_err(parse_err),
        Format::Jsonl => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| parse_err(e.to_string())))
            .collect(),
    }
}
