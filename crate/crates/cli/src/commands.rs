//! One function per subcommand. Each returns a human summary, the files it wrote
//! and whether its check passed.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rds_core::criterion::{hypothesis_report, thresholds, Check};
use rds_core::model::{Model, ModelError};
use rds_core::noise::NoiseStream;
use rds_core::phase_space::{circle_dist, CircleMap};
use rds_core::scan::{run_scan, write_manifest, write_results, Budgets, Format, ScanError, ScanSpec};
use rds_core::simulate::{
    empirical_measure, lyapunov_estimate, run_chain_with, tv_distance, BinaryTrajectory, ChainOptions, SimulateError,
};
use rds_core::sinks::{
    find_sink_parameter, random_sink_exponent, support_check, verify_trap, SinkError, DEFAULT_A_GRID, DEFAULT_SINK_STARTS,
    DEFAULT_TRAP_GRID, DEFAULT_TRAP_TRIALS, MIN_SINK_STEPS,
};
use rds_core::symbolic::{distortion_survey, itinerary_refinement, run_interval_process, Interval, SymbolicError};
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::Command;

/// Points per leaf in the distortion survey.
const DISTORTION_POINTS: usize = 8;
/// Starts pooled by the sink support histogram.
const SUPPORT_STARTS: usize = 10;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub workers: usize,
    pub dump_trajectory: bool,
}

pub struct Outcome {
    pub summary: String,
    pub files: Vec<PathBuf>,
    pub pass: bool,
}

pub fn dispatch(cmd: Command, ctx: &Context) -> Result<Outcome, CommandError> {
    match cmd {
        Command::Check => check(ctx),
        Command::Thresholds => thresholds_cmd(ctx),
        Command::Lyapunov => lyapunov(ctx),
        Command::Measure => measure(ctx),
        Command::Sink => sink(ctx),
        Command::Itinerary => itinerary(ctx),
        Command::Process => process(ctx),
        Command::Distortion => distortion(ctx),
        Command::Scan => scan(ctx),
    }
}

fn write_json<T: Serialize>(ctx: &Context, name: &str, value: &T) -> Result<PathBuf, CommandError> {
    let path = ctx.cfg.out_dir.join(name);
    let body = serde_json::to_string_pretty(value).map_err(|e| CommandError::Runtime(e.to_string()))?;
    std::fs::write(&path, body).map_err(|source| CommandError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn root(ctx: &Context) -> NoiseStream {
    NoiseStream::new(ctx.cfg.run.seed)
}

fn model(ctx: &Context) -> Result<Model, CommandError> {
    Ok(Model::new(ctx.cfg.system, ctx.cfg.psi.clone(), ctx.cfg.run.grid)?)
}

fn map(ctx: &Context) -> CircleMap {
    CircleMap::new(&ctx.cfg.system, &ctx.cfg.psi)
}

/// Replays the chain on `stream` into `trajectory.bin`.
fn dump(ctx: &Context, stream: &NoiseStream, x0: f64, n: usize) -> Result<Option<PathBuf>, CommandError> {
    if !ctx.dump_trajectory {
        return Ok(None);
    }
    let path = ctx.cfg.out_dir.join("trajectory.bin");
    let file = File::create(&path).map_err(|source| CommandError::Io { path: path.clone(), source })?;
    let mut sink = BinaryTrajectory(BufWriter::new(file));
    let opts = ChainOptions { trace: None, sink: Some(&mut sink) };
    run_chain_with(&map(ctx), ctx.cfg.system.epsilon, &mut stream.clone(), x0, n, opts)?;
    Ok(Some(path))
}

fn check_line(s: &mut String, name: &str, c: &Check) {
    let _ = writeln!(s, "{name:<14} {:<4} margin {:>12.5e}  {}", if c.pass { "ok" } else { "FAIL" }, c.margin, c.detail);
}

fn check(ctx: &Context) -> Result<Outcome, CommandError> {
    let p = &ctx.cfg.system;
    let r = hypothesis_report(p, &ctx.cfg.psi, ctx.cfg.run.grid);
    let mut s = String::new();
    let _ = writeln!(s, "L = {}  a = {}  k = {}  c = {}  beta = {}  epsilon = {:e}", p.l, p.a, p.k, p.c, p.beta, p.epsilon);
    for (name, c) in [
        ("H1", &r.h1),
        ("H2", &r.h2),
        ("H4", &r.h4),
        ("regions", &r.region_valid),
        ("H3", &r.h3),
        ("eps window", &r.eps_window),
        ("k bound", &r.kbound),
    ] {
        check_line(&mut s, name, c);
    }
    if let Some(cr) = &r.criterion {
        let _ = writeln!(s, "criterion      k_max {}  min distance {:.6}", cr.k_max, cr.min_dist);
    }
    thresholds_text(&mut s, ctx);
    let _ = writeln!(s, "empirical regime {}  proof regime {}", r.empirical_regime, r.proof_regime);
    let files = vec![write_json(ctx, "check.json", &r)?];
    Ok(Outcome { summary: s, files, pass: r.empirical_regime })
}

fn thresholds_text(s: &mut String, ctx: &Context) {
    let t = thresholds(&ctx.cfg.system);
    let _ = writeln!(s, "eps_thmA        {:.6e}", t.eps_thm_a);
    let _ = writeln!(s, "eps_thmB        {:.6e}", t.eps_thm_b);
    let _ = writeln!(s, "eps_lemma21_cap {:.6e}", t.eps_lemma21_cap);
    let _ = writeln!(s, "eps_sink_max    {:.6e}", t.eps_sink_max);
    let _ = writeln!(s, "lambda0         {:.6}  (x ln L = {:.6} nats/step)", t.lambda0, t.lambda0_ln_l);
    let _ = writeln!(s, "gamma           {:.6}", t.gamma);
    let _ = writeln!(s, "gamma1          {:.6}", t.gamma1);
}

fn thresholds_cmd(ctx: &Context) -> Result<Outcome, CommandError> {
    let mut s = String::new();
    thresholds_text(&mut s, ctx);
    let t = thresholds(&ctx.cfg.system);
    let files = vec![write_json(ctx, "thresholds.json", &t)?];
    Ok(Outcome { summary: s, files, pass: t.sharpness_gap })
}

#[derive(Serialize)]
struct LyapunovOut {
    estimate: rds_core::simulate::LyapunovEstimate,
    lower_bound: f64,
    pass: bool,
}

fn lyapunov(ctx: &Context) -> Result<Outcome, CommandError> {
    let (p, r) = (&ctx.cfg.system, &ctx.cfg.run);
    let stream = root(ctx);
    let est = lyapunov_estimate(&map(ctx), p.epsilon, &stream, r.x0, r.n_burn, r.n_steps, r.n_chains)?;
    let lower_bound = thresholds(p).lambda0_ln_l;
    let pass = est.mean - 3.0 * est.std_error > lower_bound;
    let mut s = String::new();
    let _ = writeln!(s, "chains {}  steps {}  burn {}  excluded {}", est.n_chains, est.n_steps, est.n_burn, est.excluded);
    let _ = writeln!(s, "mean {:.6} nats/step  std error {:.3e}", est.mean, est.std_error);
    let _ = writeln!(s, "mean - 3 se > lambda0 ln L = {lower_bound:.6}: {pass}");
    let mut files = vec![write_json(ctx, "lyapunov.json", &LyapunovOut { estimate: est, lower_bound, pass })?];
    files.extend(dump(ctx, &stream.substream(0), r.x0, r.n_burn + r.n_steps)?);
    Ok(Outcome { summary: s, files, pass })
}

#[derive(Serialize)]
struct MeasureOut {
    starts: [f64; 2],
    measures: Vec<rds_core::simulate::EmpiricalMeasure>,
    tv: f64,
}

fn measure(ctx: &Context) -> Result<Outcome, CommandError> {
    let (p, r) = (&ctx.cfg.system, &ctx.cfg.run);
    let stream = root(ctx);
    let starts = [0.0, 0.5];
    let m = map(ctx);
    let measures = starts
        .iter()
        .enumerate()
        .map(|(i, &x0)| empirical_measure(&m, p.epsilon, &mut stream.substream(i as u64), x0, r.n_burn, r.n_steps, r.bins))
        .collect::<Result<Vec<_>, _>>()?;
    let tv = tv_distance(&measures[0], &measures[1])?;
    let full = measures.iter().all(|m| m.occupied() == m.bins);
    let mut s = String::new();
    for (x0, m) in starts.iter().zip(&measures) {
        let _ = writeln!(s, "x0 = {x0}: {} of {} bins occupied", m.occupied(), m.bins);
    }
    let _ = writeln!(s, "total variation {tv:.6}");
    let mut files = vec![write_json(ctx, "measure.json", &MeasureOut { starts, measures, tv })?];
    files.extend(dump(ctx, &stream.substream(0), starts[0], r.n_burn + r.n_steps)?);
    Ok(Outcome { summary: s, files, pass: full })
}

#[derive(Serialize)]
struct SinkOut {
    candidates: usize,
    certificate: rds_core::sinks::SinkCertificate,
    exponent: Option<rds_core::sinks::SinkExponentReport>,
    support: Option<rds_core::sinks::SupportReport>,
}

fn sink(ctx: &Context) -> Result<Outcome, CommandError> {
    let (p, r) = (&ctx.cfg.system, &ctx.cfg.run);
    let constants = rds_core::phase_space::compute_derived_constants(&ctx.cfg.psi, r.grid).map_err(ModelError::from)?;
    let certs: Vec<_> = constants
        .critical_set
        .iter()
        .flat_map(|&x| find_sink_parameter(p, &ctx.cfg.psi, x, p.k, DEFAULT_A_GRID))
        .collect();
    let Some(best) = certs.iter().min_by(|x, y| circle_dist(x.a_star, p.a).total_cmp(&circle_dist(y.a_star, p.a))) else {
        return Err(CommandError::Runtime(format!("no period-{} sink parameter found on the grid", p.k + 1)));
    };
    let eps = if ctx.cfg.epsilon_explicit { p.epsilon } else { best.eps_max };
    let at = rds_core::phase_space::SystemParams { a: best.a_star, epsilon: eps, ..*p };
    let stream = root(ctx);
    let cert = verify_trap(best, &at, &ctx.cfg.psi, &stream.substream(0), DEFAULT_TRAP_TRIALS, DEFAULT_TRAP_GRID);
    let (exponent, support) = if cert.verified() {
        let n = r.n_steps.max(MIN_SINK_STEPS);
        (
            Some(random_sink_exponent(&cert, &at, &ctx.cfg.psi, &stream.substream(1), DEFAULT_SINK_STARTS, n)?),
            Some(support_check(&cert, &at, &ctx.cfg.psi, &stream.substream(2), SUPPORT_STARTS, r.n_steps, r.bins)?),
        )
    } else {
        (None, None)
    };
    let pass = cert.verified() && exponent.as_ref().is_some_and(|e| e.pass) && support.as_ref().is_some_and(|s| s.pass);

    let mut s = String::new();
    let _ = writeln!(s, "{} candidate parameters; nearest to a = {}:", certs.len(), p.a);
    let _ = writeln!(s, "a_star          {:.17}", cert.a_star);
    let _ = writeln!(s, "x_hat           {:.17}", cert.x_hat);
    let _ = writeln!(s, "residual        {:.3e}", cert.residual);
    let _ = writeln!(s, "r_U             {:.6e}", cert.r_u);
    let _ = writeln!(s, "eps_max         {:.6e}  (tested at {:.6e})", cert.eps_max, eps);
    let _ = writeln!(s, "trap            {}", if cert.trap_verified { "ok" } else { "FAIL" });
    let _ = writeln!(s, "max |f'| on U   {:.6} < 1/2: {}", cert.max_derivative.unwrap_or(f64::NAN), cert.derivative_verified);
    if let Some(w) = &cert.witness {
        let _ = writeln!(s, "witness         x = {:.17} omegas = {:?}", w.x, w.omegas);
    }
    if let Some(e) = &exponent {
        let _ = writeln!(s, "max exponent    {:.6} <= {:.6}: {}", e.max_exponent, e.threshold, e.pass);
    }
    if let Some(sp) = &support {
        let _ = writeln!(s, "support bins    {:?} outside {:?}", sp.occupied, sp.outside);
    }
    let files = vec![write_json(ctx, "sink.json", &SinkOut { candidates: certs.len(), certificate: cert, exponent, support })?];
    Ok(Outcome { summary: s, files, pass })
}

#[derive(Serialize)]
struct LeafOut {
    node: usize,
    birth: usize,
    last_time: usize,
    lo: f64,
    hi: f64,
    tau: Option<usize>,
    bound: Vec<(usize, u32)>,
}

#[derive(Serialize)]
struct ItineraryOut {
    depth: usize,
    shifts: Vec<f64>,
    nodes: usize,
    bound_splits: usize,
    leaves: Vec<LeafOut>,
}

fn noise_shifts(stream: &mut NoiseStream, eps: f64, depth: usize) -> Vec<f64> {
    (0..=depth).map(|i| if i == 0 { 0.0 } else { stream.draw(eps) }).collect()
}

fn itinerary(ctx: &Context) -> Result<Outcome, CommandError> {
    let m = model(ctx)?;
    let r = &ctx.cfg.run;
    let shifts = noise_shifts(&mut root(ctx), m.params.epsilon, r.tree_depth);
    let tree = itinerary_refinement(&m, &shifts, Interval::around(r.x0, m.params.epsilon), r.tree_depth, r.leaf_cap)?;
    let leaves: Vec<LeafOut> = tree
        .leaves()
        .map(|(i, n)| LeafOut {
            node: i,
            birth: n.birth,
            last_time: n.last_time,
            lo: n.last_image.lo,
            hi: n.last_image.hi,
            tau: n.tau,
            bound: n.bound.clone(),
        })
        .collect();
    let stopped = leaves.iter().filter(|l| l.tau.is_some()).count();
    let mut s = String::new();
    let _ = writeln!(s, "depth {}  nodes {}  leaves {}  stopped at tau {}", r.tree_depth, tree.nodes.len(), leaves.len(), stopped);
    let _ = writeln!(s, "splits inside bound periods {}", tree.bound_splits.len());
    let pass = tree.bound_splits.is_empty();
    let out = ItineraryOut { depth: r.tree_depth, shifts, nodes: tree.nodes.len(), bound_splits: tree.bound_splits.len(), leaves };
    let files = vec![write_json(ctx, "itinerary.json", &out)?];
    Ok(Outcome { summary: s, files, pass })
}

#[derive(Serialize)]
struct ProcessOut<'a> {
    stop: &'a rds_core::symbolic::StopReason,
    steps: usize,
    tau: &'a [usize],
    bound_periods: &'a [(usize, u32)],
    violations: &'a rds_core::symbolic::ProcessViolations,
    margins: &'a rds_core::symbolic::ProcessMargins,
}

fn process(ctx: &Context) -> Result<Outcome, CommandError> {
    let m = model(ctx)?;
    let r = &ctx.cfg.run;
    let st = run_interval_process(&m, &mut root(ctx), r.x0, r.n_steps, r.variant)?;
    let csv_path = ctx.cfg.out_dir.join("process.csv");
    let file = File::create(&csv_path).map_err(|source| CommandError::Io { path: csv_path.clone(), source })?;
    st.write_csv(BufWriter::new(file)).map_err(|e| CommandError::Runtime(format!("{}: {e}", csv_path.display())))?;
    let total = st.violations.total();
    let mut s = String::new();
    let _ = writeln!(s, "variant {:?}  steps {}  stop {:?}", st.variant, st.steps.len(), st.stop);
    let _ = writeln!(s, "deep visits {}  bound periods {}  violations {}", st.tau.len(), st.bound_periods.len(), total);
    let _ = writeln!(
        s,
        "margins: cut ratio {:.4}  free growth {:.4}  bound growth {:.4}",
        st.margins.cut_ratio, st.margins.free_growth, st.margins.bound_growth
    );
    let out = ProcessOut {
        stop: &st.stop,
        steps: st.steps.len(),
        tau: &st.tau,
        bound_periods: &st.bound_periods,
        violations: &st.violations,
        margins: &st.margins,
    };
    let files = vec![csv_path, write_json(ctx, "process.json", &out)?];
    Ok(Outcome { summary: s, files, pass: total == 0 })
}

fn distortion(ctx: &Context) -> Result<Outcome, CommandError> {
    let m = model(ctx)?;
    let r = &ctx.cfg.run;
    let survey = distortion_survey(&m, &root(ctx), r.trials, r.depth, DISTORTION_POINTS, r.k2);
    let mut s = String::new();
    let _ = writeln!(s, "free leaves {} of {} drawn, depth <= {}", survey.leaves, survey.attempts, survey.max_depth);
    let _ = writeln!(s, "max ratio {:.6}  bound there {:.6}  violations {}", survey.max_ratio, survey.bound_at_max, survey.violations);
    let files = vec![write_json(ctx, "distortion.json", &survey)?];
    Ok(Outcome { summary: s, files, pass: survey.violations == 0 })
}

fn scan(ctx: &Context) -> Result<Outcome, CommandError> {
    let cfg = ctx.cfg;
    let Some(sec) = &cfg.scan else {
        return Err(CommandError::Usage("scan needs a [scan] section in the config".into()));
    };
    let r = &cfg.run;
    let spec = ScanSpec {
        base: cfg.system,
        psi: cfg.psi.clone(),
        axes: sec.axes.clone(),
        budgets: Budgets { n_steps: r.n_steps, n_burn: r.n_burn, n_chains: r.n_chains, bins: r.bins, x0: r.x0 },
        outputs: sec.outputs.clone(),
        seed: r.seed,
        cell_cap: sec.cell_cap,
        grid: r.grid,
    };
    spec.validate().map_err(|e| CommandError::Usage(e.to_string()))?;
    let (rows, manifest) = run_scan(&spec, ctx.workers)?;
    let mut files = Vec::new();
    for f in &cfg.formats {
        let path = cfg.out_dir.join(match f {
            Format::Csv => "scan.csv",
            Format::Jsonl => "scan.jsonl",
        });
        write_results(&rows, *f, &path)?;
        files.push(path);
    }
    let mpath = cfg.out_dir.join("scan_manifest.json");
    write_manifest(&manifest, &mpath)?;
    files.push(mpath);
    let failed = rows.iter().filter(|r| r.flags.contains("error:")).count();
    let mut s = String::new();
    let _ = writeln!(s, "{} cells on {} workers in {:.2} s; {} with errors", rows.len(), ctx.workers, manifest.wall_time_s, failed);
    Ok(Outcome { summary: s, files, pass: failed == 0 })
}
