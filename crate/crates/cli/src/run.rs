//! Subcommand execution.

use std::path::PathBuf;
use std::time::Instant;

use serde_json::{json, Value};

use dicke::dynamics::{run_quench, uniform_times, PropagatorRegistry, QuenchOptions, QuenchSpec};
use dicke::eigensolver::{DirectSolve, SolverRegistry, SpectrumSource, SOLVER_VERSION};
use dicke::hilbert::{ModelParams, Observable, Sector, Subspace, DEFAULT_DIM_LIMIT};
use dicke::meanfield::{minimize_surface, quench_energy_grid, surface_grid};
use dicke::phase_diagram::{
    fit_critical_line, fit_power_law, scan_phase_diagram, CutoffPolicy, CutoffSearch, PhaseDiagram,
};

use crate::cache::SpectrumCache;
use crate::config::{
    command_line, Command, PhaseDiagramConfig, QuenchConfig, QuenchMapConfig, RunConfig,
    ScalingConfig, SpectrumConfig, SurfaceConfig,
};
use crate::error::CliError;
use crate::output::{check_targets, num, write_files, Csv, SIDECAR};

pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub messages: Vec<String>,
    pub solves: usize,
    pub cache_hits: usize,
}

/// Products of one subcommand.
struct Outcome {
    files: Vec<(String, Vec<u8>)>,
    results: Value,
    /// Failure discovered after the data files were complete.
    failure: Option<CliError>,
}

/// Data files written by each subcommand, excluding the sidecar.
pub fn planned_files(cmd: &Command) -> Vec<String> {
    let names: &[&str] = match cmd {
        Command::Spectrum(_) => &["spectrum.csv"],
        Command::PhaseDiagram(_) => &["doublet_map.csv", "critical_line.csv"],
        Command::Scaling(_) => &["critical_lines.csv", "scaling.csv"],
        Command::MeanfieldSurface(_) => &["surface.csv", "contours.csv"],
        Command::QuenchMap(_) => &["quench_map.csv", "critical_contour.csv"],
        Command::Quench(_) => &["series.csv"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

pub fn execute(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    let g = &cfg.global;
    let mut names = planned_files(&cfg.command);
    names.push(SIDECAR.into());
    check_targets(&g.out, &names, g.force)?;
    if g.dry_run {
        return Ok(RunSummary {
            files: Vec::new(),
            messages: vec![format!(
                "dry run: configuration valid, would write {}",
                names.join(", ")
            )],
            solves: 0,
            cache_hits: 0,
        });
    }

    let solvers = SolverRegistry::default();
    let mut direct = DirectSolve::new(solvers.get(&g.solver)?, solvers.get(&g.values_solver)?);
    direct.dim_limit = DEFAULT_DIM_LIMIT;
    let cache = match &g.cache_dir {
        Some(d) => {
            Some(SpectrumCache::new(d, direct.clone()).map_err(|e| CliError::io(d.display(), e))?)
        }
        None => None,
    };
    let source: &dyn SpectrumSource = match &cache {
        Some(c) => c,
        None => &direct,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;

    let compute_start = Instant::now();
    let outcome = pool.install(|| compute(cfg, source))?;
    let compute_seconds = compute_start.elapsed().as_secs_f64();

    let (solves, hits, warnings) = match &cache {
        Some(c) => (c.solves(), c.hits(), c.warnings()),
        None => (0, 0, Vec::new()),
    };
    let mut files = outcome.files;
    let sidecar = json!({
        "tool": "dicke",
        "version": env!("CARGO_PKG_VERSION"),
        "solver_version": SOLVER_VERSION,
        "run_config": cfg,
        "command_line": command_line(cfg),
        "files": files.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
        "timings": {
            "compute_seconds": compute_seconds,
            "total_seconds": started.elapsed().as_secs_f64(),
        },
        "cache": {
            "enabled": cache.is_some(),
            "solves": solves,
            "hits": hits,
            "warnings": warnings,
        },
        "results": outcome.results,
    });
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    files.push((SIDECAR.into(), text.into_bytes()));
    let written = write_files(&g.out, &files)?;
    if let Some(f) = outcome.failure {
        return Err(f);
    }
    Ok(RunSummary {
        messages: vec![format!(
            "wrote {} files to {}",
            written.len(),
            g.out.display()
        )],
        files: written,
        solves,
        cache_hits: hits,
    })
}

fn compute(cfg: &RunConfig, source: &dyn SpectrumSource) -> Result<Outcome, CliError> {
    match &cfg.command {
        Command::Spectrum(c) => spectrum(cfg, c, source),
        Command::PhaseDiagram(c) => phase_diagram(cfg, c, source),
        Command::Scaling(c) => scaling(cfg, c, source),
        Command::MeanfieldSurface(c) => meanfield_surface(cfg, c),
        Command::QuenchMap(c) => quench_map(cfg, c),
        Command::Quench(c) => quench(cfg, c, source),
    }
}

fn spectrum(
    cfg: &RunConfig,
    c: &SpectrumConfig,
    source: &dyn SpectrumSource,
) -> Result<Outcome, CliError> {
    let p = cfg.model(c.n_atoms, c.lambda, c.n_max);
    let sectors: &[Sector] = match c.sector.as_str() {
        "plus" => &[Sector::Plus],
        "minus" => &[Sector::Minus],
        _ => &[Sector::Plus, Sector::Minus],
    };
    let mut csv = Csv::new(&["sector", "index", "energy", "energy_over_J"]);
    let mut dims = serde_json::Map::new();
    for &s in sectors {
        let values = source.eigenvalues(&p, Subspace::Parity(s))?;
        dims.insert(s.sign().to_string(), json!(values.len()));
        for (i, e) in values.iter().enumerate() {
            csv.row(&[s.sign().to_string(), i.to_string(), num(*e), num(e / p.j())]);
        }
    }
    Ok(Outcome {
        files: vec![("spectrum.csv".into(), csv.into_bytes())],
        results: json!({"sector_dimensions": dims, "lambda_c": p.lambda_c()}),
        failure: None,
    })
}

fn cutoff_policy(n_max: Option<u32>, window_top: f64, growth: f64, tol: f64) -> CutoffPolicy {
    match n_max {
        Some(n) => CutoffPolicy::Fixed(n),
        None => CutoffPolicy::Converged(CutoffSearch {
            window_top,
            growth,
            tol,
            dim_limit: DEFAULT_DIM_LIMIT,
        }),
    }
}

fn map_csv(pd: &PhaseDiagram) -> Csv {
    let mut csv = Csv::new(&[
        "lambda",
        "pair_index",
        "pair_energy_over_J",
        "delta_E",
        "log10_delta_E",
    ]);
    for s in &pd.map.slices {
        for e in &s.entries {
            csv.row(&[
                num(s.lambda),
                e.index.to_string(),
                num(e.energy_over_j),
                num(e.gap),
                num(e.gap.log10()),
            ]);
        }
    }
    csv
}

fn phase_diagram(
    cfg: &RunConfig,
    c: &PhaseDiagramConfig,
    source: &dyn SpectrumSource,
) -> Result<Outcome, CliError> {
    let p = cfg.model(c.n_atoms, c.lambdas[0], c.n_max.unwrap_or(0));
    let policy = cutoff_policy(c.n_max, c.window_top, c.growth, c.cutoff_tol);
    let pd = scan_phase_diagram(&p, &c.lambdas, c.k_err, policy, source)?;
    let mut line = Csv::new(&["lambda", "Ec_over_J"]);
    for &(l, e) in &pd.line.points {
        line.row(&[num(l), num(e)]);
    }
    let cutoffs: Vec<Value> = pd
        .map
        .slices
        .iter()
        .map(|s| json!({"lambda": s.lambda, "n_max": s.n_max}))
        .collect();
    Ok(Outcome {
        files: vec![
            ("doublet_map.csv".into(), map_csv(&pd).into_bytes()),
            ("critical_line.csv".into(), line.into_bytes()),
        ],
        results: json!({
            "lambda_c": pd.line.lambda_c,
            "cutoffs": cutoffs,
            "misalignments": pd.misalignments,
        }),
        failure: None,
    })
}

fn scaling(
    cfg: &RunConfig,
    c: &ScalingConfig,
    source: &dyn SpectrumSource,
) -> Result<Outcome, CliError> {
    let policy = cutoff_policy(None, c.window_top, c.growth, c.cutoff_tol);
    let mut lines = Csv::new(&["N", "lambda", "Ec_over_J"]);
    let mut table = Csv::new(&["N", "A_N", "B_N", "residual"]);
    let mut fits = Vec::new();
    let mut misaligned = Vec::new();
    for &n in &c.n_list {
        let p = cfg.model(n, c.lambdas[0], 0);
        let pd = scan_phase_diagram(&p, &c.lambdas, c.k_err, policy, source)?;
        for &(l, e) in &pd.line.points {
            lines.row(&[n.to_string(), num(l), num(e)]);
        }
        let fit = fit_critical_line(&pd.line)?;
        table.row(&[n.to_string(), num(fit.a), num(fit.b), num(fit.residual)]);
        fits.push(fit);
        misaligned.push(json!({"N": n, "count": pd.misalignments.len()}));
    }
    let ns: Vec<f64> = c.n_list.iter().map(|&n| f64::from(n)).collect();
    let a: Vec<f64> = fits.iter().map(|f| f.a).collect();
    let b: Vec<f64> = fits.iter().map(|f| f.b).collect();
    let (fix_a, fix_b) = if c.free_asymptotes {
        (None, None)
    } else {
        (Some(-1.0), Some(0.0))
    };
    let mut failure = None;
    let mut report = |series: &[f64], fixed| match fit_power_law(&ns, series, fixed) {
        Ok(f) => serde_json::to_value(f).expect("fit serializes"),
        Err(e) => {
            let msg = e.to_string();
            failure.get_or_insert(CliError::Compute(e));
            json!({"error": msg})
        }
    };
    let power_a = report(&a, fix_a);
    let power_b = report(&b, fix_b);
    Ok(Outcome {
        files: vec![
            ("critical_lines.csv".into(), lines.into_bytes()),
            ("scaling.csv".into(), table.into_bytes()),
        ],
        results: json!({
            "fits": fits,
            "power_law_A": power_a,
            "power_law_B": power_b,
            "misalignments": misaligned,
        }),
        failure,
    })
}

fn meanfield_surface(cfg: &RunConfig, c: &SurfaceConfig) -> Result<Outcome, CliError> {
    let p = cfg.model(c.n_atoms, c.lambda, 0);
    let range = |r: &Option<Vec<f64>>| {
        let r = r.as_deref().expect("ranges resolved during parsing");
        (r[0], r[1])
    };
    let grid = surface_grid(
        c.lambda,
        range(&c.mu_range),
        range(&c.nu_range),
        c.resolution,
        &p,
    )?;
    let mut surface = Csv::new(&["mu", "nu", "E_over_J"]);
    let nm = grid.mu_axis.len();
    for (k, v) in grid.values.iter().enumerate() {
        surface.row(&[
            num(grid.mu_axis[k % nm]),
            num(grid.nu_axis[k / nm]),
            num(*v),
        ]);
    }
    let mut contours = Csv::new(&["level", "curve", "point", "mu", "nu"]);
    let mut components = Vec::new();
    for &level in &c.levels {
        for (ci, line) in grid.level_curves(level).iter().enumerate() {
            for (pi, &(x, y)) in line.points.iter().enumerate() {
                contours.row(&[num(level), ci.to_string(), pi.to_string(), num(x), num(y)]);
            }
        }
        components.push(json!({"level": level, "components_below": grid.components_below(level)}));
    }
    let minimum = minimize_surface(c.lambda, &p)?;
    Ok(Outcome {
        files: vec![
            ("surface.csv".into(), surface.into_bytes()),
            ("contours.csv".into(), contours.into_bytes()),
        ],
        results: json!({
            "minimum": minimum,
            "minimum_energy_over_J": minimum.branch_plus.energy / p.j(),
            "critical_level_shape": grid.critical_level_shape(),
            "levels": components,
        }),
        failure: None,
    })
}

fn quench_map(cfg: &RunConfig, c: &QuenchMapConfig) -> Result<Outcome, CliError> {
    let p = cfg.model(c.n_atoms, 0.0, 0);
    let li = (c.lambda_i_range[0], c.lambda_i_range[1]);
    let lf = (c.lambda_f_range[0], c.lambda_f_range[1]);
    let grid = quench_energy_grid(li, lf, c.resolution, &p)?;
    let mut map = Csv::new(&["lambda_i", "lambda_f", "E_over_J"]);
    let nf = grid.lambda_f_axis.len();
    for (k, v) in grid.values.iter().enumerate() {
        map.row(&[
            num(grid.lambda_i_axis[k / nf]),
            num(grid.lambda_f_axis[k % nf]),
            num(*v),
        ]);
    }
    let mut contour = Csv::new(&["curve", "point", "lambda_i", "lambda_f"]);
    for (ci, line) in grid.critical_contour.iter().enumerate() {
        for (pi, &(x, y)) in line.points.iter().enumerate() {
            contour.row(&[ci.to_string(), pi.to_string(), num(y), num(x)]);
        }
    }
    Ok(Outcome {
        files: vec![
            ("quench_map.csv".into(), map.into_bytes()),
            ("critical_contour.csv".into(), contour.into_bytes()),
        ],
        results: json!({"critical_contour_curves": grid.critical_contour.len(), "lambda_c": p.lambda_c()}),
        failure: None,
    })
}

fn quench(
    cfg: &RunConfig,
    c: &QuenchConfig,
    source: &dyn SpectrumSource,
) -> Result<Outcome, CliError> {
    let base: ModelParams = cfg.model(c.n_atoms, c.lambda_f, 0);
    let observable: Observable = c.observable.parse()?;
    let mut spec = QuenchSpec::new(c.lambda_i, c.lambda_f, c.branch, observable);
    spec.times = uniform_times(c.t_max, c.samples);
    let options = QuenchOptions {
        drop_tol: c.drop_tol,
        degeneracy_tol: c.degeneracy_tol,
        window: c.window,
        threshold: c.threshold,
        dim_limit: DEFAULT_DIM_LIMIT,
        n_max: c.n_max,
    };
    let propagator =
        PropagatorRegistry::with_settings(c.drop_tol, c.rk4_step).get(&c.propagator)?;
    let r = run_quench(&spec, &base, &options, source, propagator.as_ref())?;
    let j = r.params.j();
    let mut csv = Csv::new(&["t", "value_over_J"]);
    for (t, v) in r.series.times.iter().zip(&r.series.values) {
        csv.row(&[num(*t), num(v / j)]);
    }
    let steady = r.series.steady;
    Ok(Outcome {
        files: vec![("series.csv".into(), csv.into_bytes())],
        results: json!({
            "lambda_i": c.lambda_i,
            "lambda_f": c.lambda_f,
            "branch": c.branch,
            "N": c.n_atoms,
            "n_max": r.params.n_max,
            "observable": observable.name(),
            "propagator": r.propagator,
            "mu": r.mu,
            "nu": r.nu,
            "E_over_J_formula": r.energy_formula_over_j,
            "E_over_J_numeric": r.energy_numeric_over_j,
            "steady_mean": steady.mean / j,
            "steady_rms": steady.rms / j,
            "steady_window_start": steady.window_start,
            "classification": steady.classification.as_str(),
            "diagonal_over_J": r.diagonal.value / j,
            "degenerate_prediction_over_J": r.degenerate_prediction / j,
            "max_imaginary_residue": r.series.max_imag,
            "significant_states": r.significant_states,
        }),
        failure: None,
    })
}
