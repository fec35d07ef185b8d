//! `nudge`: pilot fitting, design, estimation and simulation from the shell.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{load_toml, DesignConfig, EstimateConfig, FitPilotConfig, Method};
use nudge_core::compliance::{fit_compliance_with, predict_probs, ComplianceModel};
use nudge_core::design::{closed_form_unconstrained, objective, solve, DesignProblem, SolveStatus};
use nudge_core::estimation::{
    bootstrap_ci, estimate_gamma_crossfit, plugin_pipeline, wls_pipeline, EstimatorKind, EstimatorSpec,
};
use nudge_core::features::FeatureRecipe;
use nudge_core::model::{csv_headers, induced_treatment_propensity, load_cohort, load_dataset, load_propensity, Schema};
use nudge_core::simulation::{emit_report, run_monte_carlo, SimulationConfig};
use nudge_core::Error;

#[derive(Parser, Debug)]
#[command(name = "nudge", version, about = "Optimal encouragement designs and LATE estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the compliance model on a pilot study.
    FitPilot(FitPilotArgs),
    /// Solve for nudge probabilities on a cohort.
    Design(DesignArgs),
    /// Estimate the LATE from a completed study.
    Estimate(EstimateArgs),
    /// Monte Carlo comparison of designs on synthetic data.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct FitPilotArgs {
    /// Pilot CSV with covariates, z and w.
    pilot: PathBuf,
    /// Column roles, e.g. `x=a,b,score;z=z;w=w;score=score;intercept`.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Interior spline knots on the score (0 = raw covariates).
    #[arg(long)]
    spline_knots: Option<usize>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Cohort CSV with the covariates.
    cohort: PathBuf,
    /// Compliance model written by `fit-pilot`.
    model: PathBuf,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// TOML file with `budget`, `monotone`, `gain_rho`, `gain_reference`.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Mean induced treatment probability.
    #[arg(long)]
    budget: Option<f64>,
    /// Nudge probabilities nondecreasing in the score.
    #[arg(long)]
    monotone: bool,
    /// Keep at least this share of the reference score gain.
    #[arg(long)]
    gain_rho: Option<f64>,
    #[arg(long, default_value = "design.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Merged pilot and main study CSV with y.
    data: PathBuf,
    /// Per-row `e_z` used when the data were collected.
    design: PathBuf,
    /// Compliance model to use instead of refitting on `data`.
    #[arg(long, conflicts_with = "refit")]
    model: Option<PathBuf>,
    /// Refit the compliance model on `data` (the default without `--model`).
    #[arg(long)]
    refit: bool,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    folds: Option<usize>,
    /// Bootstrap replicates for a percentile interval (0 = none).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "estimate.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation TOML.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "sim_out")]
    out: PathBuf,
}

fn schema_for(path: &Path, flag: Option<&str>, file: Option<Schema>) -> Result<Schema> {
    Ok(match (flag, file) {
        (Some(s), _) => Schema::parse(s)?,
        (None, Some(s)) => s,
        (None, None) => Schema::infer(&csv_headers(path)?)?,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).context("serializing output")?;
    s.push('\n');
    fs::write(path, s).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn cmd_fit_pilot(a: FitPilotArgs) -> Result<()> {
    let mut cfg: FitPilotConfig = load_toml(a.config.as_deref())?;
    if let Some(k) = a.spline_knots {
        cfg.spline_knots = k;
    }
    cfg.validate()?;
    let schema = schema_for(&a.pilot, a.schema.as_deref(), cfg.schema.take())?;
    let pilot = load_dataset::<f64>(&a.pilot, &schema).with_context(|| format!("loading {}", a.pilot.display()))?;
    let recipe = if cfg.spline_knots == 0 {
        FeatureRecipe::identity(pilot.d())
    } else {
        FeatureRecipe::score_spline(pilot.x(), pilot.score_col(), cfg.spline_knots)?
    };
    let model = fit_compliance_with(&pilot, recipe, cfg.ridge_lambda, cfg.clip_epsilon)?;
    let stats = model.clip_stats(pilot.x())?;
    println!(
        "pilot rows {}: z=0 {}, z=1 {}; clipped complier share {}, crossing arms {}",
        pilot.n(),
        pilot.arm(false).len(),
        pilot.arm(true).len(),
        stats.floored,
        stats.crossing
    );
    write_json(&a.out, &model)
}

#[derive(Serialize)]
struct DesignDiagnostics {
    status: SolveStatus,
    objective: f64,
    unconstrained_objective: f64,
    inflation_ratio: f64,
    iterations: usize,
    kkt_residual: f64,
    projection_residual: f64,
    mean_e_z: f64,
    mean_e_w: f64,
}

fn load_model(path: &Path) -> Result<ComplianceModel<f64>> {
    let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())).into())
}

fn cmd_design(a: DesignArgs) -> Result<()> {
    let mut cfg: DesignConfig = load_toml(a.config.as_deref())?;
    if let Some(p) = &a.constraints {
        cfg.constraints = load_toml(Some(p))?;
    }
    if a.budget.is_some() {
        cfg.constraints.budget = a.budget;
    }
    if a.monotone {
        cfg.constraints.monotone = true;
    }
    if a.gain_rho.is_some() {
        cfg.constraints.gain_rho = a.gain_rho;
    }
    cfg.validate()?;
    let schema = schema_for(&a.cohort, a.schema.as_deref(), cfg.schema.take())?;
    let cohort = load_cohort::<f64>(&a.cohort, &schema).with_context(|| format!("loading {}", a.cohort.display()))?;
    let model = load_model(&a.model)?;
    let probs = predict_probs(&model, &cohort.x)?;
    let prob = DesignProblem::from_probs(cohort.x.clone(), probs.clone(), cfg.scale_n)?;
    let cons = cfg.constraints.to_set(cohort.score());
    let sol = solve(&prob, &cons, &cfg.solver)?;
    let base = objective(&closed_form_unconstrained(&probs), &prob)?;
    let e_w = induced_treatment_propensity(&probs, &sol.e_z_star)?;
    let n = e_w.len() as f64;
    let diag = DesignDiagnostics {
        status: sol.status,
        objective: sol.objective,
        unconstrained_objective: base,
        inflation_ratio: sol.objective / base,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        projection_residual: sol.projection_residual,
        mean_e_z: sol.e_z_star.as_slice().iter().sum::<f64>() / n,
        mean_e_w: e_w.iter().sum::<f64>() / n,
    };
    let sol = sol.ensure_converged()?;
    sol.write_csv(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    write_json(&a.out.with_extension("json"), &diag)?;
    println!(
        "objective {:.6e} (unconstrained {:.6e}, ratio {:.4}); {} iterations; mean e_W {:.6}",
        diag.objective, base, diag.inflation_ratio, diag.iterations, diag.mean_e_w
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateOutput {
    #[serde(flatten)]
    estimate: nudge_core::LateEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<WlsDiagnostics>,
}

#[derive(Serialize)]
struct WlsDiagnostics {
    variance_ratio_min: f64,
    variance_ratio_max: f64,
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let mut cfg: EstimateConfig = load_toml(a.config.as_deref())?;
    if let Some(m) = a.method {
        cfg.method = m;
    }
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    if let Some(b) = a.bootstrap {
        cfg.bootstrap = b;
    }
    if let Some(l) = a.level {
        cfg.level = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let schema = schema_for(&a.data, a.schema.as_deref(), cfg.schema.take())?;
    let data = load_dataset::<f64>(&a.data, &schema).with_context(|| format!("loading {}", a.data.display()))?;
    data.require_y()?;
    let e_z = load_propensity::<f64>(&a.design).with_context(|| format!("loading {}", a.design.display()))?;
    if e_z.len() != data.n() {
        return Err(Error::LengthMismatch { expected: data.n(), got: e_z.len() }.into());
    }
    let probs = match &a.model {
        Some(p) => Some(predict_probs(&load_model(p)?, data.x())?),
        None => None,
    };
    let spec = EstimatorSpec {
        kind: cfg.kind(),
        nuisance: cfg.nuisance.clone(),
        seed: cfg.seed,
    };
    let mut diagnostics = None;
    let mut estimate = match spec.kind {
        EstimatorKind::Plugin => plugin_pipeline(&data, &e_z, &spec.nuisance, probs.as_ref())?,
        EstimatorKind::Crossfit { folds } => {
            estimate_gamma_crossfit(&data, &e_z, &spec.nuisance, folds, cfg.seed, probs.as_ref())?
        }
        EstimatorKind::Wls => {
            let (est, s0, s1) = wls_pipeline(&data, &e_z, &spec.nuisance, probs.as_ref())?;
            let ratios = s0.iter().zip(&s1).map(|(a, b)| a / b);
            let (lo, hi) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r), h.max(r)));
            diagnostics = Some(WlsDiagnostics {
                variance_ratio_min: lo,
                variance_ratio_max: hi,
            });
            est
        }
    };
    if cfg.bootstrap > 0 {
        estimate.ci = Some(bootstrap_ci(&data, &e_z, &spec, cfg.bootstrap, cfg.level, cfg.seed)?);
    }
    println!("tau_late {:.6} ({:?})", estimate.tau_late, estimate.method);
    if let Some(ci) = &estimate.ci {
        println!("{:.0}% interval [{:.6}, {:.6}] from {} replicates", ci.level * 100.0, ci.lo, ci.hi, ci.replicates);
    }
    write_json(&a.out, &EstimateOutput { estimate, diagnostics })
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimulationConfig = load_toml(Some(&a.config))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.threads == Some(0) {
        return Err(Error::InvalidConfig("--threads must be positive".into()).into());
    }
    cfg.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = a.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("starting worker pool")?;
    let report = pool.install(|| run_monte_carlo(&cfg))?;
    emit_report(&report, &a.out)?;
    println!(
        "true LATE {:.4} (MC s.e. {:.4})",
        report.true_late.value, report.true_late.std_error
    );
    println!("{:<20} {:>8} {:>12} {:>12} {:>12} {:>6}", "design", "n", "mean", "variance", "mse", "fail");
    for c in &report.cells {
        println!(
            "{:<20} {:>8} {:>12.4} {:>12.4} {:>12.4} {:>6}",
            c.design, c.n, c.mean, c.variance, c.mse, c.failures
        );
    }
    for o in &report.objectives {
        println!("objective {:<20} {:>12.6e} ratio {:.4}", o.design, o.objective, o.ratio);
    }
    Ok(())
}

/// 2 for bad input, 1 for failures of the computation itself.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::FitPilot(a) => cmd_fit_pilot(a),
        Command::Design(a) => cmd_design(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
