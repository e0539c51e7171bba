//! `blendsa`: blended IPW/MI analysis and δ sensitivity sweeps from the
//! command line.

mod config;
mod output;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blendsa::engine::{run_blended, BlendedFit, EngineOptions, Method};
use blendsa::inference::bootstrap_mi;
use blendsa::sim::{generate_durable_like, generate_scenario, run_scenario, scenario_setup, ScenarioConfig, ScenarioRun};
use blendsa::sweep::{cell_count, conditional_sweep, grid_sweep, parse_grid, tipping_point, SweepOptions, SweepResult};
use blendsa::tabular::{read_csv, Column, ColumnKind, ColumnTable};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{parse_axis_arg, RunConfig};
use output::OutDir;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or input files.
    Config(String),
    Numerical(String),
    /// Outputs were written but some sweep cells failed.
    Partial(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Partial(_) => 4,
        }
    }
}

impl From<blendsa::Error> for CliError {
    fn from(e: blendsa::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Partial(m) => write!(f, "partial result: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "blendsa", version, about = "Blended IPW/MI analysis with delta-adjusted MNAR sensitivity analysis")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "BLENDSA_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate simulated data, or run the simulation study for one scenario.
    Simulate(SimulateArgs),
    /// Fit the blended analysis at a fixed δ, with bootstrap intervals when B > 0.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-axis, two-way or full Cartesian δ sweeps.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mechanism to vary, as `k` or `k=lo:hi:step`. Grids in the config win.
        #[arg(long = "axis", allow_hyphen_values = true)]
        axes: Vec<String>,
        /// Allow more than two varied mechanisms.
        #[arg(long)]
        full_grid: bool,
        /// Coefficient drawn in the heatmap.
        #[arg(long)]
        coefficient: Option<String>,
    },
    /// Connecting quantities over a δ grid for one mechanism.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mechanism: usize,
        /// `lo:hi:step`; defaults to the method's grid.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Smallest |δ| at which a coefficient's significance flips.
    Tipping {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mechanism: Option<usize>,
        #[arg(long)]
        coefficient: Option<String>,
        /// `lo:hi`
        #[arg(long, allow_hyphen_values = true)]
        interval: Option<String>,
    },
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Scenario 1 (Z2 MNAR) or 2 (Y MNAR).
    #[arg(long)]
    scenario: Option<u8>,
    /// III, IMI, IIM or IMM.
    #[arg(long)]
    assignment: Option<String>,
    #[arg(long, default_value = "-2:2:0.1", allow_hyphen_values = true)]
    delta_grid: String,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Bootstrap replicates per fit for coverage; 0 skips it.
    #[arg(long, default_value_t = 0)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Only write a generated dataset and its latent values.
    #[arg(long)]
    gen_only: bool,
    /// Generate the bariatric-cohort-like data instead of a scenario.
    #[arg(long)]
    durable: bool,
    /// Generator δ for (Z2, Y), e.g. `0.5,0`. Defaults to the scenario's.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    delta_gen: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("blendsa: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Analyze { config, out } => cmd_analyze(&config, &out),
        Command::Sweep { config, out, axes, full_grid, coefficient } => {
            cmd_sweep(&config, &out, &axes, full_grid, coefficient.as_deref())
        }
        Command::Diagnose { config, out, mechanism, grid } => cmd_diagnose(&config, &out, mechanism, grid.as_deref()),
        Command::Tipping { config, out, mechanism, coefficient, interval } => {
            cmd_tipping(&config, &out, mechanism, coefficient, interval.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("blendsa: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn engine_options(cfg: &RunConfig) -> EngineOptions {
    EngineOptions { weight_cap: cfg.weight_cap, ..EngineOptions::default() }
}

fn load(config: &Path) -> Result<(RunConfig, ColumnTable), CliError> {
    let cfg = RunConfig::load(config)?;
    let table = read_csv(&cfg.data, &cfg.schema)
        .map_err(|e| CliError::Config(format!("{}: {e}", cfg.data.display())))?;
    cfg.spec.check_table(&table).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, table))
}

fn continuous(v: Vec<f64>) -> Column {
    Column::complete(ColumnKind::Continuous, v).expect("finite values")
}

fn optional(v: Vec<Option<f64>>) -> Column {
    Column::from_options(ColumnKind::Continuous, &v).expect("finite values")
}

fn flags(v: Vec<Option<bool>>) -> Column {
    let cells: Vec<Option<f64>> = v.into_iter().map(|b| b.map(|b| f64::from(u8::from(b)))).collect();
    Column::from_options(ColumnKind::Binary, &cells).expect("0/1 values")
}

fn labels(v: Vec<String>) -> Column {
    let kind = ColumnKind::labels(v.clone());
    let levels = kind.levels().to_vec();
    let idx: Vec<f64> = v.iter().map(|s| levels.iter().position(|l| l == s).expect("own level") as f64).collect();
    Column::complete(kind, idx).expect("valid levels")
}

fn table(cols: Vec<(&str, Column)>) -> ColumnTable {
    ColumnTable::new(cols.into_iter().map(|(n, c)| (n.to_string(), c)).collect()).expect("equal lengths")
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let key = json!({
        "seed": a.seed, "scenario": a.scenario, "assignment": a.assignment, "delta_grid": a.delta_grid,
        "reps": a.reps, "n": a.n, "m": a.m, "b": a.b, "alpha": a.alpha, "gen_only": a.gen_only,
        "durable": a.durable, "delta_gen": a.delta_gen,
    });
    let mut out = OutDir::create(&a.out)?;
    if a.gen_only || a.durable {
        let data = if a.durable {
            generate_durable_like(a.n, a.seed)
        } else {
            let scenario = a.scenario.unwrap_or(1);
            let (default_gen, _) = scenario_setup(scenario)?;
            let delta_gen = match &a.delta_gen {
                None => default_gen,
                Some(v) if v.len() == 2 => [v[0], v[1]],
                Some(v) => return Err(CliError::Config(format!("--delta-gen needs 2 values, got {}", v.len()))),
            };
            generate_scenario(&ScenarioConfig { n: a.n, delta_gen, seed: a.seed })
        };
        out.write_table("data", &data.table)?;
        out.write_table("latent", &data.latent)?;
        return out.finish("simulate", key.to_string().as_bytes(), a.seed);
    }

    let scenario = a.scenario.ok_or_else(|| CliError::Config("--scenario is required unless --gen-only".into()))?;
    let assignment = a.assignment.clone().ok_or_else(|| CliError::Config("--assignment is required".into()))?;
    let deltas = parse_grid(&a.delta_grid).map_err(|e| CliError::Config(e.to_string()))?;
    let run = ScenarioRun { scenario, assignment, deltas, n: a.n, n_reps: a.reps, m: a.m, seed: a.seed, b: a.b, alpha: a.alpha };
    let reports = run_scenario(&run).map_err(|e| match e {
        blendsa::Error::Invalid(m) => CliError::Config(m),
        other => other.into(),
    })?;
    let names = reports[0].coefficient_names.clone();
    let mut cols: Vec<(String, Column)> = vec![
        ("delta".into(), continuous(reports.iter().map(|r| r.delta).collect())),
        ("n_reps".into(), continuous(reports.iter().map(|r| r.n_reps as f64).collect())),
        ("n_failed".into(), continuous(reports.iter().map(|r| r.n_failed as f64).collect())),
    ];
    let finite = |v: f64| v.is_finite().then_some(v);
    for (j, name) in names.iter().enumerate() {
        cols.push((format!("pct_bias[{name}]"), optional(reports.iter().map(|r| finite(r.pct_bias[j])).collect())));
        cols.push((format!("mc_se[{name}]"), optional(reports.iter().map(|r| finite(r.mc_se[j])).collect())));
        if a.b > 0 {
            cols.push((
                format!("coverage[{name}]"),
                optional(reports.iter().map(|r| r.coverage.as_ref().map(|c| c[j])).collect()),
            ));
        }
    }
    out.write_table("bias", &ColumnTable::new(cols).expect("equal lengths"))?;
    out.finish("simulate", key.to_string().as_bytes(), a.seed)
}

fn diagnostics_table(fit: &BlendedFit) -> ColumnTable {
    let rows: Vec<(usize, &blendsa::engine::MechanismDiagnostics)> =
        fit.diagnostics.iter().enumerate().flat_map(|(l, d)| d.iter().map(move |m| (l + 1, m))).collect();
    table(vec![
        ("imputation", continuous(rows.iter().map(|(l, _)| *l as f64).collect())),
        ("mechanism", continuous(rows.iter().map(|(_, d)| d.mechanism as f64).collect())),
        ("name", labels(rows.iter().map(|(_, d)| d.name.clone()).collect())),
        ("method", labels(rows.iter().map(|(_, d)| d.method.clone()).collect())),
        ("n_at_risk", continuous(rows.iter().map(|(_, d)| d.n_at_risk as f64).collect())),
        ("n_observed", continuous(rows.iter().map(|(_, d)| d.n_observed as f64).collect())),
        ("min_probability", optional(rows.iter().map(|(_, d)| d.min_probability).collect())),
        ("max_weight", optional(rows.iter().map(|(_, d)| d.max_weight).collect())),
        ("ess", optional(rows.iter().map(|(_, d)| d.ess).collect())),
        ("extreme_weights", flags(rows.iter().map(|(_, d)| Some(d.extreme_weights)).collect())),
        ("n_augmented", continuous(rows.iter().map(|(_, d)| d.augmented.len() as f64).collect())),
    ])
}

fn cmd_analyze(config: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (cfg, data) = load(config)?;
    let options = engine_options(&cfg);
    let (fit, ci, failures) = if cfg.b > 0 {
        let r = bootstrap_mi(&data, &cfg.spec, &cfg.delta, cfg.b, cfg.m, cfg.alpha, cfg.seed, &options)?;
        (r.point, Some((r.ci_lower, r.ci_upper)), r.failures.len())
    } else {
        (run_blended(&data, &cfg.spec, &cfg.delta, cfg.m, cfg.seed, &options)?, None, 0)
    };
    let p = fit.theta_hat.len();
    let ci_at = |side: usize| -> Vec<Option<f64>> {
        (0..p).map(|j| ci.as_ref().map(|c| if side == 0 { c.0[j] } else { c.1[j] })).collect()
    };
    let significant: Vec<Option<bool>> = (0..p).map(|j| ci.as_ref().map(|c| c.0[j] > 0.0 || c.1[j] < 0.0)).collect();
    let estimates = table(vec![
        ("coef_name", labels(fit.coefficient_names.clone())),
        ("estimate", continuous(fit.theta_hat.clone())),
        ("ci_lo", optional(ci_at(0))),
        ("ci_hi", optional(ci_at(1))),
        ("significant", flags(significant)),
    ]);
    let mut out = OutDir::create(out_dir)?;
    out.write_table("estimates", &estimates)?;
    out.write_table("diagnostics", &diagnostics_table(&fit))?;
    out.write_json(
        "summary.json",
        &json!({
            "delta": cfg.delta, "m": cfg.m, "b": cfg.b, "alpha": cfg.alpha,
            "analysis_n": fit.analysis_n, "analysis_ess": fit.analysis_ess,
            "bootstrap_failures": failures,
        }),
    )?;
    out.finish("analyze", &cfg.bytes, cfg.seed)
}

fn heatmap_coefficient(result: &SweepResult, wanted: Option<&str>) -> Result<usize, CliError> {
    match wanted {
        Some(n) => result.index_of(n).ok_or_else(|| CliError::Config(format!("no coefficient `{n}` in the analysis model"))),
        None => Ok(result.coefficient_names.iter().position(|n| n != "(Intercept)").unwrap_or(0)),
    }
}

fn cmd_sweep(config: &Path, out_dir: &Path, axis_args: &[String], full_grid: bool, coefficient: Option<&str>) -> Result<(), CliError> {
    let (cfg, data) = load(config)?;
    let extra = axis_args.iter().map(|s| parse_axis_arg(s)).collect::<Result<Vec<_>, _>>().map_err(CliError::Config)?;
    let axes = cfg.axes(&extra)?;
    if axes.is_empty() {
        return Err(CliError::Config("no sweep axes: add `sweep` to the config or pass --axis".into()));
    }
    let cells = cell_count(&axes);
    if axes.len() > 2 {
        if !(full_grid || cfg.full_grid) {
            return Err(CliError::Config(format!(
                "{} varied mechanisms give {cells} cells; pass --full-grid to run the full Cartesian sweep",
                axes.len()
            )));
        }
        eprintln!("blendsa: full grid over {} mechanisms, {cells} cells", axes.len());
    }
    let options = SweepOptions { engine: engine_options(&cfg), b: if cfg.per_cell_ci { cfg.b } else { 0 }, alpha: cfg.alpha };
    let result = grid_sweep(&data, &cfg.spec, &axes, cfg.m, cfg.seed, &options)?;
    let mut out = OutDir::create(out_dir)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    out.write_text("sweep.csv", std::str::from_utf8(&buf).expect("csv is utf-8"))?;
    out.write_schema("sweep", &result.schema())?;
    if axes.len() == 2 {
        let j = heatmap_coefficient(&result, coefficient.or(cfg.heatmap_coefficient.as_deref()))?;
        out.write_text("heatmap.svg", &svg::heatmap(&result, j))?;
    }
    out.finish("sweep", &cfg.bytes, cfg.seed)?;
    match result.n_failed() {
        0 => Ok(()),
        f => Err(CliError::Partial(format!("{f} of {cells} cells failed; see the error column of sweep.csv"))),
    }
}

fn cmd_diagnose(config: &Path, out_dir: &Path, mechanism: usize, grid: Option<&str>) -> Result<(), CliError> {
    let (cfg, data) = load(config)?;
    let sm = cfg
        .spec
        .sub_mechanisms
        .get(mechanism.wrapping_sub(1))
        .ok_or_else(|| CliError::Config(format!("mechanism {mechanism} does not exist")))?;
    let is_mi = match &sm.method {
        Method::Mi { .. } => true,
        Method::Ipw { sensitivity, .. } if !sensitivity.is_empty() => false,
        _ => {
            return Err(CliError::Config(format!(
                "mechanism {mechanism} (`{}`) is neither IPW with a sensitivity function nor MI",
                sm.name
            )))
        }
    };
    let extra = [(mechanism, grid.map(parse_grid).transpose().map_err(|e| CliError::Config(e.to_string()))?)];
    let axes = cfg.axes(&extra)?;
    let axis = axes.into_iter().find(|a| a.mechanism == mechanism).expect("axis was added");
    let options = SweepOptions { engine: engine_options(&cfg), b: 0, alpha: cfg.alpha };
    let result = conditional_sweep(&data, &cfg.spec, mechanism, &axis.grid, cfg.m, cfg.seed, &options)?;
    let values: Vec<Option<f64>> = result.cells.iter().map(|c| c.connecting[0]).collect();
    let deltas: Vec<f64> = axis.grid.clone();
    let label = result.connecting_labels[0].clone();
    let mut cols = vec![("delta", continuous(deltas.clone())), ("value", optional(values.clone()))];
    if is_mi {
        let anchor = deltas.iter().position(|d| *d == 0.0).and_then(|i| values[i]);
        cols.push(("shift", optional(values.iter().map(|v| v.zip(anchor).map(|(v, a)| v - a)).collect())));
        cols.push(("exact_shift", continuous(deltas.clone())));
    } else if label.starts_with("P(") {
        cols.push(("clipped", flags(values.iter().map(|v| v.map(|v| v == 0.0 || v == 1.0)).collect())));
    }
    cols.push(("mar_anchor", flags(deltas.iter().map(|d| Some(*d == 0.0)).collect())));
    let mut out = OutDir::create(out_dir)?;
    out.write_table("connecting", &table(cols))?;
    out.write_json(
        "connecting.json",
        &json!({
            "mechanism": mechanism,
            "name": sm.name,
            "quantity": label,
            "assumption": if is_mi {
                "average imputed value over imputations and imputed cells"
            } else {
                "the covariate distribution among R = 0 subjects does not depend on delta"
            },
            "failed_cells": result.n_failed(),
        }),
    )?;
    out.finish("diagnose", &cfg.bytes, cfg.seed)?;
    match result.n_failed() {
        0 => Ok(()),
        f => Err(CliError::Partial(format!("{f} grid points failed"))),
    }
}

fn cmd_tipping(
    config: &Path,
    out_dir: &Path,
    mechanism: Option<usize>,
    coefficient: Option<String>,
    interval: Option<&str>,
) -> Result<(), CliError> {
    let (cfg, data) = load(config)?;
    let t = cfg.tipping.clone();
    let mechanism = mechanism
        .or(t.as_ref().map(|t| t.mechanism))
        .ok_or_else(|| CliError::Config("--mechanism or `tipping.mechanism` is required".into()))?;
    let coefficient = coefficient
        .or(t.as_ref().map(|t| t.coefficient.clone()))
        .ok_or_else(|| CliError::Config("--coefficient or `tipping.coefficient` is required".into()))?;
    let interval = match interval {
        Some(s) => {
            let (lo, hi) = s.split_once(':').ok_or_else(|| CliError::Config(format!("interval `{s}` is not lo:hi")))?;
            let p = |v: &str| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("interval `{s}` is not lo:hi")));
            [p(lo)?, p(hi)?]
        }
        None => t.as_ref().map_or([-2.0, 2.0], |t| t.interval),
    };
    let b = cfg.b.max(1);
    let delta_star = tipping_point(
        &data,
        &cfg.spec,
        mechanism,
        &coefficient,
        (interval[0], interval[1]),
        b,
        cfg.m,
        cfg.alpha,
        cfg.seed,
        &engine_options(&cfg),
    )
    .map_err(|e| match e {
        blendsa::Error::Invalid(m) => CliError::Config(m),
        other => other.into(),
    })?;
    let mut out = OutDir::create(out_dir)?;
    out.write_json(
        "tipping.json",
        &json!({
            "mechanism": mechanism, "coefficient": coefficient, "interval": interval,
            "b": b, "m": cfg.m, "alpha": cfg.alpha, "delta_star": delta_star,
        }),
    )?;
    out.finish("tipping", &cfg.bytes, cfg.seed)
}
