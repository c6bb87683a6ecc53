//! Run configuration: TOML file, then command-line overrides, then defaults.

use std::fs;
use std::path::{Path, PathBuf};

use rds_core::criterion::{thresholds, DEFAULT_GRID};
use rds_core::phase_space::{Harmonic, PsiSpec, SystemParams};
use rds_core::scan::{Axis, Format, Outputs, DEFAULT_CELL_CAP};
use rds_core::symbolic::{Variant, DEFAULT_K2, DEFAULT_LEAF_CAP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PsiSection {
    /// `(j, cos amplitude, sin amplitude)` triples.
    terms: Vec<(u32, f64, f64)>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    #[serde(rename = "L")]
    l: Option<f64>,
    a: Option<f64>,
    beta: Option<f64>,
    k: Option<u32>,
    c: Option<f64>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    seed: Option<u64>,
    n_steps: Option<usize>,
    n_burn: Option<usize>,
    n_chains: Option<usize>,
    bins: Option<usize>,
    x0: Option<f64>,
    grid: Option<usize>,
    depth: Option<usize>,
    tree_depth: Option<usize>,
    trials: Option<usize>,
    variant: Option<Variant>,
    k2: Option<f64>,
    leaf_cap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default = "default_cell_cap")]
    pub cell_cap: usize,
}

fn default_cell_cap() -> usize {
    DEFAULT_CELL_CAP
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    directory: Option<PathBuf>,
    formats: Option<Vec<Format>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    psi: Option<PsiSection>,
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    run: RunSection,
    scan: Option<ScanSection>,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub n_steps: usize,
    pub n_burn: usize,
    pub n_chains: usize,
    pub bins: usize,
    pub x0: f64,
    /// Grid for the derived constants of ψ.
    pub grid: usize,
    /// Deepest sampled leaf in the distortion survey.
    pub depth: usize,
    /// Depth of the full itinerary tree; leaves grow roughly geometrically with it.
    pub tree_depth: usize,
    /// Leaves, ω-vectors or sampled runs, depending on the subcommand.
    pub trials: usize,
    pub variant: Variant,
    pub k2: f64,
    pub leaf_cap: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            seed: 42,
            n_steps: 100_000,
            n_burn: 10_000,
            n_chains: 8,
            bins: 100,
            x0: 0.0,
            grid: DEFAULT_GRID,
            depth: 10,
            tree_depth: 2,
            trials: 1000,
            variant: Variant::Sec3,
            k2: DEFAULT_K2,
            leaf_cap: DEFAULT_LEAF_CAP,
        }
    }
}

/// The effective configuration, recorded verbatim in every manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub psi: PsiSpec,
    pub system: SystemParams,
    /// Whether ε came from the file or a flag rather than the default `eps_thmB`.
    pub epsilon_explicit: bool,
    pub run: RunSettings,
    pub scan: Option<ScanSection>,
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
    pub l: Option<f64>,
    pub a: Option<f64>,
    pub epsilon: Option<f64>,
    pub k: Option<u32>,
    pub c: Option<f64>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
}

fn parse_file(text: &str, path: &Path) -> Result<FileConfig, ConfigError> {
    toml::from_str(text).map_err(|e: toml::de::Error| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
        ConfigError::Parse { path: path.to_path_buf(), line, message: e.message().to_string() }
    })
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

/// Reads `path` (if any) and applies `ov`; flag > file > default.
pub fn parse_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    let file = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
            parse_file(&text, p)?
        }
        None => FileConfig::default(),
    };
    resolve(file, ov)
}

/// As [`parse_config`] for in-memory TOML.
pub fn parse_config_str(text: &str, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    resolve(parse_file(text, Path::new("<inline>"))?, ov)
}

fn resolve(file: FileConfig, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    let desk = SystemParams::desk();
    let psi = match file.psi {
        Some(sec) if sec.terms.is_empty() => return Err(invalid("psi.terms", "at least one harmonic is required")),
        Some(sec) => PsiSpec::new(sec.terms.into_iter().map(|(j, cos_amp, sin_amp)| Harmonic { j, cos_amp, sin_amp }).collect()),
        None => PsiSpec::desk(),
    };
    psi.validate().map_err(|e| invalid("psi", e.to_string()))?;

    let s = file.system;
    let mut system = SystemParams {
        l: ov.l.or(s.l).unwrap_or(desk.l),
        a: ov.a.or(s.a).unwrap_or(desk.a),
        beta: ov.beta.or(s.beta).unwrap_or(desk.beta),
        k: ov.k.or(s.k).unwrap_or(desk.k),
        c: ov.c.or(s.c).unwrap_or(desk.c),
        epsilon: 0.0,
        alpha: ov.alpha.or(s.alpha).unwrap_or(desk.alpha),
    };
    let explicit = ov.epsilon.or(s.epsilon);
    // default: the low end of the window where a unique measure is expected
    system.epsilon = explicit.unwrap_or_else(|| thresholds(&system).eps_thm_b);
    system.validate().map_err(|e| invalid("system", e.to_string()))?;

    let d = RunSettings::default();
    let r = file.run;
    let run = RunSettings {
        seed: ov.seed.or(r.seed).unwrap_or(d.seed),
        n_steps: r.n_steps.unwrap_or(d.n_steps),
        n_burn: r.n_burn.unwrap_or(d.n_burn),
        n_chains: r.n_chains.unwrap_or(d.n_chains),
        bins: r.bins.unwrap_or(d.bins),
        x0: r.x0.unwrap_or(d.x0),
        grid: r.grid.unwrap_or(d.grid),
        depth: r.depth.unwrap_or(d.depth),
        tree_depth: r.tree_depth.unwrap_or(d.tree_depth),
        trials: r.trials.unwrap_or(d.trials),
        variant: r.variant.unwrap_or(d.variant),
        k2: r.k2.unwrap_or(d.k2),
        leaf_cap: r.leaf_cap.unwrap_or(d.leaf_cap),
    };
    for (field, v) in [("run.n_steps", run.n_steps), ("run.n_chains", run.n_chains), ("run.bins", run.bins), ("run.trials", run.trials), ("run.depth", run.depth), ("run.tree_depth", run.tree_depth)] {
        if v == 0 {
            return Err(invalid(field, "must be positive"));
        }
    }
    if !(0.0..1.0).contains(&run.x0) {
        return Err(invalid("run.x0", "must lie in [0, 1)"));
    }
    if !(run.k2.is_finite() && run.k2 > 0.0) {
        return Err(invalid("run.k2", "must be a positive real"));
    }

    let formats = match ov.format {
        Some(f) => vec![f],
        None => file.output.formats.unwrap_or_else(|| vec![Format::Csv]),
    };
    if formats.is_empty() {
        return Err(invalid("output.formats", "at least one format is required"));
    }
    let out_dir = ov.out_dir.clone().or(file.output.directory).unwrap_or_else(|| PathBuf::from("rds-out"));
    Ok(RunConfig { psi, system, epsilon_explicit: explicit.is_some(), run, scan: file.scan, out_dir, formats })
}
