//! `rds`: subcommands over rds-core, one per checkable unit of the theory.
//!
//! Exit codes: 0 success, 1 a `--strict` check failed, 2 runtime error,
//! 64 usage error (bad flags, bad config, `scan` without a scan section).

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{parse_config, parse_config_str, ConfigError, Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

pub const RUN_MANIFEST_SCHEMA: &str = "run_manifest_v1";

#[derive(Debug, Parser)]
#[command(name = "rds", version, about = "Randomly perturbed expanding circle maps: criteria, simulation, verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Hypotheses, the finite-time criterion and the threshold table.
    Check,
    /// ε-thresholds and exponent constants only.
    Thresholds,
    /// Block-averaged Lyapunov estimate over independent chains.
    Lyapunov,
    /// Histograms from two starts and their total-variation distance.
    Measure,
    /// Superattracting parameter nearest `a`, trap and exponent verification.
    Sink,
    /// Itinerary refinement of `x0 ± ε` to the configured depth.
    Itinerary,
    /// One supporting-interval process run with its step history.
    Process,
    /// Distortion of sampled free itinerary leaves.
    Distortion,
    /// Parameter sweep from the config's scan section.
    Scan,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Thresholds => "thresholds",
            Command::Lyapunov => "lyapunov",
            Command::Measure => "measure",
            Command::Sink => "sink",
            Command::Itinerary => "itinerary",
            Command::Process => "process",
            Command::Distortion => "distortion",
            Command::Scan => "scan",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Clone, Debug, Default, Args)]
pub struct GlobalArgs {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "RDS_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
    /// Exit 1 when the subcommand's check fails.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Write the first chain as little-endian f64 to `trajectory.bin`.
    #[arg(long, global = true)]
    pub dump_trajectory: bool,
    #[arg(long = "L", global = true)]
    pub l: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<u32>,
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            format: self.format.map(|f| match f {
                FormatArg::Csv => rds_core::scan::Format::Csv,
                FormatArg::Jsonl => rds_core::scan::Format::Jsonl,
            }),
            l: self.l,
            a: self.a,
            epsilon: self.epsilon,
            k: self.k,
            c: self.c,
            beta: self.beta,
            alpha: self.alpha,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    schema: &'static str,
    subcommand: &'static str,
    version: &'static str,
    argv: Vec<String>,
    seed: u64,
    workers: usize,
    strict: bool,
    config: &'a RunConfig,
    exit_code: i32,
    wall_time_s: f64,
    outputs: Vec<String>,
    error: Option<String>,
}

/// Parses the configuration, runs the subcommand, writes `<subcommand>.manifest.json`.
pub fn run(cli: &Cli, argv: Vec<String>) -> i32 {
    let start = Instant::now();
    let cfg = match parse_config(cli.global.config.as_deref(), &cli.global.overrides()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("rds: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.out_dir) {
        eprintln!("rds: {}: {e}", cfg.out_dir.display());
        return EXIT_RUNTIME;
    }
    let ctx = commands::Context { cfg: &cfg, workers: cli.global.workers(), dump_trajectory: cli.global.dump_trajectory };
    let (code, outputs, error) = match commands::dispatch(cli.command, &ctx) {
        Ok(out) => {
            println!("{}", out.summary.trim_end());
            let code = if cli.global.strict && !out.pass { EXIT_CHECK_FAILED } else { EXIT_OK };
            (code, out.files, None)
        }
        Err(commands::CommandError::Usage(m)) => {
            eprintln!("rds: {m}");
            (EXIT_USAGE, Vec::new(), Some(m))
        }
        Err(e) => {
            eprintln!("rds: {e}");
            (EXIT_RUNTIME, Vec::new(), Some(e.to_string()))
        }
    };
    let manifest = RunManifest {
        schema: RUN_MANIFEST_SCHEMA,
        subcommand: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        argv,
        seed: cfg.run.seed,
        workers: ctx.workers,
        strict: cli.global.strict,
        config: &cfg,
        exit_code: code,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        error,
    };
    let path = cfg.out_dir.join(format!("{}.manifest.json", cli.command.name()));
    match serde_json::to_string_pretty(&manifest).map(|s| std::fs::write(&path, s)) {
        Ok(Ok(())) => code,
        Ok(Err(e)) => {
            eprintln!("rds: {}: {e}", path.display());
            EXIT_RUNTIME
        }
        Err(e) => {
            eprintln!("rds: manifest: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Entry point shared by the binary and tests: clap errors map to 64 (help and version to 0).
pub fn main_with_args(argv: Vec<String>) -> i32 {
    match Cli::try_parse_from(&argv) {
        Ok(cli) => run(&cli, argv),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
