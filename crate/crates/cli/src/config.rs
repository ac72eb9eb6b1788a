//! Command-line and JSON-file configuration.
//!
//! Precedence is flags, then the `--config` file, then defaults. File keys
//! are flag names with dashes replaced by underscores.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use dicke::dynamics::PropagatorRegistry;
use dicke::eigensolver::SolverRegistry;
use dicke::hilbert::{ModelParams, Observable};

use crate::error::CliError;

pub const CACHE_ENV: &str = "DICKE_CACHE_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "dicke",
    version,
    about = "Dicke model excited-state phase diagram and quench dynamics"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Args, Debug, Serialize)]
struct GlobalArgs {
    /// JSON file with default values for any flag
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Spectrum cache directory (default: $DICKE_CACHE_DIR, else ./cache)
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Disable the spectrum cache
    #[arg(long, global = true)]
    no_cache: bool,
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Eigensolver for eigenpairs
    #[arg(long, global = true)]
    solver: Option<String>,
    /// Eigensolver for eigenvalue-only requests
    #[arg(long, global = true)]
    values_solver: Option<String>,
    /// Overwrite existing output files
    #[arg(long, global = true)]
    force: bool,
    /// Validate the configuration and exit without computing
    #[arg(long, global = true)]
    dry_run: bool,
}

const GLOBAL_KEYS: [&str; 8] = [
    "out",
    "cache_dir",
    "no_cache",
    "threads",
    "solver",
    "values_solver",
    "force",
    "dry_run",
];

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    n_atoms: Option<u32>,
}

#[derive(Args, Debug, Serialize)]
struct CutoffArgs {
    /// Top of the eigenvalue window (E/J) checked for cutoff convergence
    #[arg(long, allow_hyphen_values = true)]
    window_top: Option<f64>,
    #[arg(long)]
    growth: Option<f64>,
    #[arg(long)]
    cutoff_tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum CommandArgs {
    /// Sector eigenvalues of H(λ)
    Spectrum(SpectrumArgs),
    /// Doublet-gap map and critical line over a λ grid
    PhaseDiagram(PhaseDiagramArgs),
    /// Critical-line fits over several atom numbers
    Scaling(ScalingArgs),
    /// Mean-field energy surface and its level curves
    MeanfieldSurface(SurfaceArgs),
    /// Quench-energy map over (λ_i, λ_f)
    QuenchMap(QuenchMapArgs),
    /// Time evolution after a quench
    Quench(QuenchArgs),
}

#[derive(Args, Debug, Serialize)]
struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long)]
    n_max: Option<u32>,
    /// plus, minus or both
    #[arg(long)]
    sector: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct PhaseDiagramArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Comma-separated values or `start:stop:step`
    #[arg(long, allow_hyphen_values = true)]
    lambdas: Option<String>,
    #[arg(long)]
    k_err: Option<f64>,
    /// Fixed photon cutoff; the convergence search is used when absent
    #[arg(long)]
    n_max: Option<u32>,
    #[command(flatten)]
    #[serde(flatten)]
    cutoff: CutoffArgs,
}

#[derive(Args, Debug, Serialize)]
struct ScalingArgs {
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    omega0: Option<f64>,
    /// Atom numbers, comma-separated
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u32>>,
    #[arg(long, allow_hyphen_values = true)]
    lambdas: Option<String>,
    #[arg(long)]
    k_err: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    cutoff: CutoffArgs,
    /// Fit the power-law asymptotes instead of fixing them at -1 and 0
    #[arg(long)]
    free_asymptotes: bool,
}

#[derive(Args, Debug, Serialize)]
struct SurfaceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    nu_range: Option<Vec<f64>>,
    /// Contour levels in units of J
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    levels: Option<Vec<f64>>,
}

#[derive(Args, Debug, Serialize)]
struct QuenchMapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lambda_i_range: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lambda_f_range: Option<Vec<f64>>,
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct QuenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    lambda_i: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_f: Option<f64>,
    /// +1 or -1
    #[arg(long, allow_hyphen_values = true)]
    branch: Option<i32>,
    /// Jx or q
    #[arg(long)]
    observable: Option<String>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Averaging window as a fraction of the final samples
    #[arg(long)]
    window: Option<f64>,
    /// Classification threshold in units of J
    #[arg(long)]
    threshold: Option<f64>,
    /// spectral or rk4
    #[arg(long)]
    propagator: Option<String>,
    #[arg(long)]
    n_max: Option<u32>,
    #[arg(long)]
    drop_tol: Option<f64>,
    #[arg(long)]
    degeneracy_tol: Option<f64>,
    #[arg(long)]
    rk4_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    pub out: PathBuf,
    /// `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub threads: usize,
    pub solver: String,
    pub values_solver: String,
    pub force: bool,
    pub dry_run: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub omega: f64,
    pub omega0: f64,
    pub n_atoms: u32,
    pub lambda: f64,
    pub n_max: u32,
    pub sector: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDiagramConfig {
    pub omega: f64,
    pub omega0: f64,
    pub n_atoms: u32,
    pub lambdas: Vec<f64>,
    pub k_err: f64,
    pub n_max: Option<u32>,
    pub window_top: f64,
    pub growth: f64,
    pub cutoff_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub omega: f64,
    pub omega0: f64,
    pub n_list: Vec<u32>,
    pub lambdas: Vec<f64>,
    pub k_err: f64,
    pub window_top: f64,
    pub growth: f64,
    pub cutoff_tol: f64,
    pub free_asymptotes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub omega: f64,
    pub omega0: f64,
    pub n_atoms: u32,
    pub lambda: f64,
    pub resolution: usize,
    pub mu_range: Option<Vec<f64>>,
    pub nu_range: Option<Vec<f64>>,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchMapConfig {
    pub omega: f64,
    pub omega0: f64,
    pub n_atoms: u32,
    pub lambda_i_range: Vec<f64>,
    pub lambda_f_range: Vec<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchConfig {
    pub omega: f64,
    pub omega0: f64,
    pub n_atoms: u32,
    pub lambda_i: f64,
    pub lambda_f: f64,
    pub branch: i32,
    pub observable: String,
    pub t_max: f64,
    pub samples: usize,
    pub window: f64,
    pub threshold: f64,
    pub propagator: String,
    pub n_max: Option<u32>,
    pub drop_tol: f64,
    pub degeneracy_tol: f64,
    pub rk4_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    Spectrum(SpectrumConfig),
    PhaseDiagram(PhaseDiagramConfig),
    Scaling(ScalingConfig),
    MeanfieldSurface(SurfaceConfig),
    QuenchMap(QuenchMapConfig),
    Quench(QuenchConfig),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::PhaseDiagram(_) => "phase-diagram",
            Command::Scaling(_) => "scaling",
            Command::MeanfieldSurface(_) => "meanfield-surface",
            Command::QuenchMap(_) => "quench-map",
            Command::Quench(_) => "quench",
        }
    }
}

/// Fully resolved run description; serialized into every sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub global: GlobalConfig,
    pub command: Command,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// `a,b,c` or `start:stop:step` (inclusive, rounded to 12 decimals).
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| config_err(format!("bad number `{t}` in grid `{s}`")))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(config_err(format!("grid `{s}` must be start:stop:step")));
        }
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(h > 0.0) || !(b >= a) {
            return Err(config_err(format!(
                "grid `{s}` needs step > 0 and stop >= start"
            )));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|k| ((a + k as f64 * h) * 1e12).round() / 1e12)
            .collect())
    } else {
        s.split(',').map(num).collect()
    }
}

fn to_object<T: Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v).expect("args serialize") {
        Value::Object(m) => m
            .into_iter()
            .filter(|(_, v)| !v.is_null() && *v != Value::Bool(false))
            .collect(),
        _ => Map::new(),
    }
}

fn overlay(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        base.insert(k, v);
    }
}

fn normalize_grid(map: &mut Map<String, Value>) -> Result<(), CliError> {
    if let Some(Value::String(s)) = map.get("lambdas") {
        let grid = parse_grid(s)?;
        map.insert("lambdas".into(), json!(grid));
    }
    Ok(())
}

fn resolve<T: DeserializeOwned>(
    defaults: Value,
    file: Map<String, Value>,
    flags: Map<String, Value>,
) -> Result<T, CliError> {
    let Value::Object(mut merged) = defaults else {
        unreachable!("defaults are objects")
    };
    overlay(&mut merged, file);
    overlay(&mut merged, flags);
    normalize_grid(&mut merged)?;
    serde_json::from_value(Value::Object(merged)).map_err(config_err)
}

const DEFAULT_GRID: &str = "0.6:2.0:0.1";

fn model_defaults() -> Value {
    json!({"omega": 1.0, "omega0": 1.0})
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn load_file(path: &PathBuf) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))? {
        Value::Object(m) => Ok(m),
        _ => Err(config_err(format!(
            "{}: expected a JSON object",
            path.display()
        ))),
    }
}

/// Parses argv (including the program name). `Ok(None)` means help or
/// version text was printed.
pub fn parse_args<I, T>(args: I) -> Result<Option<RunConfig>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(None);
        }
        Err(e) => {
            return Err(CliError::Config(
                e.render().to_string().trim_end().to_owned(),
            ))
        }
    };
    let file = match &cli.global.config {
        Some(p) => load_file(p)?,
        None => Map::new(),
    };
    let (file_global, file_cmd): (Map<String, Value>, Map<String, Value>) = file
        .into_iter()
        .partition(|(k, _)| GLOBAL_KEYS.contains(&k.as_str()));

    let cache_default = std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cache"));
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let Value::Object(mut g) = json!({
        "out": "out",
        "cache_dir": cache_default,
        "threads": threads,
        "solver": dicke::eigensolver::DEFAULT_SOLVER,
        "values_solver": "band-ql",
        "force": false,
        "dry_run": false,
    }) else {
        unreachable!()
    };
    overlay(&mut g, file_global);
    overlay(&mut g, to_object(&cli.global));
    if g.remove("no_cache") == Some(Value::Bool(true)) {
        g.insert("cache_dir".into(), Value::Null);
    }
    let global: GlobalConfig = serde_json::from_value(Value::Object(g)).map_err(config_err)?;

    let cutoff = json!({"window_top": 0.0, "growth": dicke::phase_diagram::DEFAULT_GROWTH,
        "cutoff_tol": dicke::phase_diagram::DEFAULT_CUTOFF_TOL});
    let command = match &cli.command {
        CommandArgs::Spectrum(a) => Command::Spectrum(resolve(
            with(model_defaults(), json!({"sector": "both"})),
            file_cmd,
            to_object(a),
        )?),
        CommandArgs::PhaseDiagram(a) => Command::PhaseDiagram(resolve(
            with(
                with(model_defaults(), cutoff),
                json!({"lambdas": DEFAULT_GRID, "k_err": dicke::phase_diagram::DEFAULT_K_ERR, "n_max": null}),
            ),
            file_cmd,
            to_object(a),
        )?),
        CommandArgs::Scaling(a) => Command::Scaling(resolve(
            with(
                with(model_defaults(), cutoff),
                json!({"window_top": -0.5, "lambdas": DEFAULT_GRID, "n_list": [10, 16, 24, 32],
                    "k_err": dicke::phase_diagram::DEFAULT_K_ERR, "free_asymptotes": false}),
            ),
            file_cmd,
            to_object(a),
        )?),
        CommandArgs::MeanfieldSurface(a) => {
            let mut c: SurfaceConfig = resolve(
                with(
                    model_defaults(),
                    json!({"resolution": 512, "levels": [-1.0], "mu_range": null, "nu_range": null}),
                ),
                file_cmd,
                to_object(a),
            )?;
            let p = ModelParams {
                omega: c.omega,
                omega0: c.omega0,
                lambda: c.lambda,
                n_atoms: c.n_atoms,
                n_max: 0,
            };
            if p.validate().is_ok() {
                let (mu, nu) = dicke::meanfield::SurfaceGrid::default_ranges(c.lambda, &p);
                c.mu_range.get_or_insert(vec![mu.0, mu.1]);
                c.nu_range.get_or_insert(vec![nu.0, nu.1]);
            }
            Command::MeanfieldSurface(c)
        }
        CommandArgs::QuenchMap(a) => Command::QuenchMap(resolve(
            with(
                model_defaults(),
                json!({"lambda_i_range": [0.52, 2.5], "lambda_f_range": [0.0, 2.5], "resolution": 256}),
            ),
            file_cmd,
            to_object(a),
        )?),
        CommandArgs::Quench(a) => Command::Quench(resolve(
            with(
                model_defaults(),
                json!({"branch": 1, "observable": "Jx",
                    "t_max": dicke::dynamics::DEFAULT_T_MAX, "samples": dicke::dynamics::DEFAULT_SAMPLES,
                    "window": dicke::dynamics::DEFAULT_WINDOW, "threshold": dicke::dynamics::DEFAULT_THRESHOLD,
                    "propagator": "spectral", "n_max": null,
                    "drop_tol": dicke::dynamics::DEFAULT_DROP_TOL,
                    "degeneracy_tol": dicke::dynamics::DEFAULT_DEGENERACY_TOL, "rk4_step": 1e-3}),
            ),
            file_cmd,
            to_object(a),
        )?),
    };
    let config = RunConfig { global, command };
    validate(&config)?;
    Ok(Some(config))
}

impl RunConfig {
    pub fn model(&self, n_atoms: u32, lambda: f64, n_max: u32) -> ModelParams {
        let (omega, omega0) = match &self.command {
            Command::Spectrum(c) => (c.omega, c.omega0),
            Command::PhaseDiagram(c) => (c.omega, c.omega0),
            Command::Scaling(c) => (c.omega, c.omega0),
            Command::MeanfieldSurface(c) => (c.omega, c.omega0),
            Command::QuenchMap(c) => (c.omega, c.omega0),
            Command::Quench(c) => (c.omega, c.omega0),
        };
        ModelParams {
            omega,
            omega0,
            lambda,
            n_atoms,
            n_max,
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn check_range(name: &str, r: &[f64]) -> Result<(), CliError> {
    check(
        r.len() == 2 && r[0].is_finite() && r[1].is_finite() && r[0] < r[1],
        || format!("{name} must be two increasing finite numbers, got {r:?}"),
    )
}

fn check_params(p: &ModelParams) -> Result<(), CliError> {
    p.validate().map_err(config_err)
}

fn check_grid(lambdas: &[f64]) -> Result<(), CliError> {
    check(!lambdas.is_empty(), || "lambda grid is empty".into())?;
    check(lambdas.iter().all(|l| l.is_finite() && *l >= 0.0), || {
        format!("lambda values must be finite and >= 0, got {lambdas:?}")
    })
}

fn check_cutoff(window_top: f64, growth: f64, tol: f64) -> Result<(), CliError> {
    check(window_top.is_finite(), || {
        "window_top must be finite".into()
    })?;
    check(growth > 0.0, || {
        format!("growth must be positive, got {growth}")
    })?;
    check(tol > 0.0, || {
        format!("cutoff_tol must be positive, got {tol}")
    })
}

/// Everything checkable before computing.
pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.global;
    check(g.threads >= 1, || "threads must be at least 1".into())?;
    let solvers = SolverRegistry::default();
    solvers.get(&g.solver).map_err(config_err)?;
    solvers.get(&g.values_solver).map_err(config_err)?;
    match &cfg.command {
        Command::Spectrum(c) => {
            check_params(&cfg.model(c.n_atoms, c.lambda, c.n_max))?;
            check(
                matches!(c.sector.as_str(), "plus" | "minus" | "both"),
                || format!("sector must be plus, minus or both, got `{}`", c.sector),
            )?;
        }
        Command::PhaseDiagram(c) => {
            check_grid(&c.lambdas)?;
            for &l in &c.lambdas {
                check_params(&cfg.model(c.n_atoms, l, c.n_max.unwrap_or(0)))?;
            }
            check(c.k_err > 0.0, || {
                format!("k_err must be positive, got {}", c.k_err)
            })?;
            check_cutoff(c.window_top, c.growth, c.cutoff_tol)?;
        }
        Command::Scaling(c) => {
            check_grid(&c.lambdas)?;
            check(c.n_list.len() >= 3, || {
                "scaling needs at least 3 atom numbers".into()
            })?;
            check(c.n_list.windows(2).all(|w| w[1] > w[0]), || {
                "n_list must be strictly increasing".into()
            })?;
            for &n in &c.n_list {
                check_params(&cfg.model(n, c.lambdas[0], 0))?;
            }
            let above = c
                .lambdas
                .iter()
                .filter(|&&l| l > cfg.model(1, 0.0, 0).lambda_c())
                .count();
            check(above >= 3, || {
                "scaling needs at least 3 lambda values above the critical coupling".into()
            })?;
            check(c.k_err > 0.0, || {
                format!("k_err must be positive, got {}", c.k_err)
            })?;
            check_cutoff(c.window_top, c.growth, c.cutoff_tol)?;
        }
        Command::MeanfieldSurface(c) => {
            check_params(&cfg.model(c.n_atoms, c.lambda, 0))?;
            check(c.resolution >= 2, || "resolution must be at least 2".into())?;
            check_range("mu_range", c.mu_range.as_deref().unwrap_or(&[]))?;
            check_range("nu_range", c.nu_range.as_deref().unwrap_or(&[]))?;
            check(c.levels.iter().all(|l| l.is_finite()), || {
                "levels must be finite".into()
            })?;
        }
        Command::QuenchMap(c) => {
            let p = cfg.model(c.n_atoms, 0.0, 0);
            check_params(&p)?;
            check_range("lambda_i_range", &c.lambda_i_range)?;
            check_range("lambda_f_range", &c.lambda_f_range)?;
            check(c.lambda_i_range[0] > p.lambda_c(), || {
                format!(
                    "lambda_i_range must lie above the critical coupling {}",
                    p.lambda_c()
                )
            })?;
            check(c.lambda_f_range[0] >= 0.0, || {
                "lambda_f_range must be >= 0".into()
            })?;
            check(c.resolution >= 2, || "resolution must be at least 2".into())?;
        }
        Command::Quench(c) => {
            let p = cfg.model(c.n_atoms, c.lambda_f, c.n_max.unwrap_or(0));
            check_params(&p)?;
            check(c.lambda_i > p.lambda_c(), || {
                format!(
                    "lambda_i = {} must exceed the critical coupling {}",
                    c.lambda_i,
                    p.lambda_c()
                )
            })?;
            check(c.branch == 1 || c.branch == -1, || {
                format!("branch must be 1 or -1, got {}", c.branch)
            })?;
            c.observable.parse::<Observable>().map_err(config_err)?;
            PropagatorRegistry::default()
                .get(&c.propagator)
                .map_err(config_err)?;
            check(c.t_max > 0.0 && c.t_max.is_finite(), || {
                "t_max must be positive".into()
            })?;
            check(c.samples >= 2, || "samples must be at least 2".into())?;
            check(c.window > 0.0 && c.window <= 1.0, || {
                "window must be in (0, 1]".into()
            })?;
            check(
                (c.window * c.samples as f64).ceil() as usize
                    >= dicke::dynamics::MIN_WINDOW_SAMPLES,
                || {
                    format!(
                        "averaging window must hold at least {} samples",
                        dicke::dynamics::MIN_WINDOW_SAMPLES
                    )
                },
            )?;
            check(c.threshold >= 0.0, || "threshold must be >= 0".into())?;
            check(c.drop_tol >= 0.0 && c.degeneracy_tol >= 0.0, || {
                "tolerances must be >= 0".into()
            })?;
            check(c.rk4_step > 0.0, || "rk4_step must be positive".into())?;
        }
    }
    Ok(())
}

fn flag_value(v: &Value) -> Option<String> {
    match v {
        Value::Null | Value::Bool(false) => None,
        Value::Bool(true) => Some(String::new()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(a) => Some(
            a.iter()
                .filter_map(flag_value)
                .collect::<Vec<_>>()
                .join(","),
        ),
        Value::Object(_) => None,
    }
}

/// Explicit argv reproducing `cfg` (without `--force`/`--dry-run`).
pub fn command_line(cfg: &RunConfig) -> Vec<String> {
    let g = &cfg.global;
    let mut args = vec!["dicke".to_owned(), format!("--out={}", g.out.display())];
    match &g.cache_dir {
        Some(d) => args.push(format!("--cache-dir={}", d.display())),
        None => args.push("--no-cache".into()),
    }
    args.push(format!("--threads={}", g.threads));
    args.push(format!("--solver={}", g.solver));
    args.push(format!("--values-solver={}", g.values_solver));
    args.push(cfg.command.name().into());
    if let Value::Object(m) = serde_json::to_value(&cfg.command).expect("config serializes") {
        for (k, v) in m {
            if k == "subcommand" {
                continue;
            }
            let flag = format!("--{}", k.replace('_', "-"));
            match flag_value(&v) {
                Some(s) if s.is_empty() => args.push(flag),
                Some(s) => args.push(format!("{flag}={s}")),
                None => {}
            }
        }
    }
    args
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig, CliError> {
        parse_args(std::iter::once("dicke").chain(args.iter().copied())).map(|c| c.unwrap())
    }

    #[test]
    fn quench_example_is_valid() {
        let c = parse(&[
            "quench",
            "--n-atoms",
            "20",
            "--lambda-i",
            "1.41",
            "--lambda-f",
            "1.13",
        ])
        .unwrap();
        let Command::Quench(q) = &c.command else {
            panic!()
        };
        assert_eq!(
            (q.n_atoms, q.lambda_i, q.lambda_f, q.branch),
            (20, 1.41, 1.13, 1)
        );
        assert_eq!(q.samples, 4000);
        assert_eq!(q.omega, 1.0);
    }

    #[test]
    fn negative_lambda_rejected() {
        let e = parse(&[
            "spectrum",
            "--n-atoms",
            "4",
            "--n-max",
            "4",
            "--lambda",
            "-0.5",
        ])
        .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn missing_subcommand_and_unknown_flag() {
        assert_eq!(parse(&[]).unwrap_err().exit_code(), 2);
        assert_eq!(
            parse(&["quench", "--bogus", "1"]).unwrap_err().exit_code(),
            2
        );
        assert_eq!(
            parse(&["quench", "--n-atoms", "x"])
                .unwrap_err()
                .exit_code(),
            2
        );
        let e = parse(&["quench", "--lambda-i", "1.41", "--lambda-f", "1.0"]).unwrap_err();
        assert!(e.to_string().contains("n_atoms"), "{e}");
    }

    #[test]
    fn file_then_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"n_atoms": 8, "lambda_i": 1.0, "lambda_f": 0.7, "threads": 3}"#,
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let c = parse(&["--config", p, "quench", "--lambda-f", "0.9"]).unwrap();
        let Command::Quench(q) = &c.command else {
            panic!()
        };
        assert_eq!((q.n_atoms, q.lambda_i, q.lambda_f), (8, 1.0, 0.9));
        assert_eq!(c.global.threads, 3);

        std::fs::write(&path, r#"{"n_atoms": "eight"}"#).unwrap();
        assert_eq!(
            parse(&["--config", p, "quench"]).unwrap_err().exit_code(),
            2
        );
        std::fs::write(&path, r#"{"n_atomz": 8}"#).unwrap();
        assert_eq!(
            parse(&["--config", p, "quench"]).unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn grids() {
        assert_eq!(
            parse_grid("0.6:1.0:0.1").unwrap(),
            vec![0.6, 0.7, 0.8, 0.9, 1.0]
        );
        assert_eq!(parse_grid("1.41").unwrap(), vec![1.41]);
        assert_eq!(parse_grid("0.5,1").unwrap(), vec![0.5, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn command_line_round_trips() {
        let c = parse(&[
            "--no-cache",
            "meanfield-surface",
            "--n-atoms",
            "10",
            "--lambda",
            "0.8",
            "--resolution",
            "64",
        ])
        .unwrap();
        let again = parse_args(command_line(&c)).unwrap().unwrap();
        assert_eq!(c, again);
        let c = parse(&[
            "phase-diagram",
            "--n-atoms",
            "6",
            "--lambdas",
            "0.3:0.9:0.3",
            "--window-top",
            "-0.5",
        ])
        .unwrap();
        assert_eq!(parse_args(command_line(&c)).unwrap().unwrap(), c);
    }

    #[test]
    fn unknown_solver_rejected() {
        let e = parse(&[
            "--solver",
            "lapack",
            "spectrum",
            "--n-atoms",
            "2",
            "--lambda",
            "0.1",
            "--n-max",
            "2",
        ]);
        assert_eq!(e.unwrap_err().exit_code(), 2);
    }
}
