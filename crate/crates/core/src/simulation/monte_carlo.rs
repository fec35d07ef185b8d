//! Seeded parallel Monte Carlo comparison of design strategies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{compliance_curves, covariates, generate_study, true_late, DgpConfig, LateOracle, DEFAULT_ORACLE_SIZE};
use crate::compliance::predict_probs;
use crate::design::{
    closed_form_unconstrained, objective, rdd_design, solve, ConstraintSet, DesignProblem, GainReference, SolverOptions,
};
use crate::error::{Error, Result};
use crate::estimation::{EstimatorSpec, Interaction, NuisanceSpec};
use crate::linalg::Matrix;
use crate::model::{ComplianceProbabilities, NudgePropensity};

/// Maps `(X, predicted compliance)` of a main study to nudge probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DesignStrategy {
    /// Constant nudge probability.
    Rct { e_z: f64 },
    /// Nudge the top-score prefix whose mean induced treatment stays within `budget`.
    Rdd { budget: f64 },
    /// Solve the design program under the given constraints.
    Optimal {
        #[serde(default)]
        budget: Option<f64>,
        #[serde(default)]
        monotone: bool,
        #[serde(default)]
        gain_rho: Option<f64>,
    },
}

impl DesignStrategy {
    pub fn constraints(&self, score: &[f64]) -> ConstraintSet<f64> {
        let mut cons = ConstraintSet::unconstrained().with_score(score.to_vec());
        if let DesignStrategy::Optimal { budget, monotone, gain_rho } = *self {
            if let Some(mu) = budget {
                cons = cons.with_budget(mu);
            }
            if monotone {
                cons = cons.monotone();
            }
            if let Some(rho) = gain_rho {
                cons = cons.with_gain(rho, GainReference::Auto);
            }
        }
        cons
    }

    pub fn propensity(
        &self,
        x: &Matrix<f64>,
        probs: &ComplianceProbabilities<f64>,
        score: &[f64],
        opts: &SolverOptions<f64>,
    ) -> Result<NudgePropensity<f64>> {
        match *self {
            DesignStrategy::Rct { e_z } => NudgePropensity::constant(x.nrows(), e_z),
            DesignStrategy::Rdd { budget } => Ok(rdd_design(score, budget, probs)),
            DesignStrategy::Optimal { .. } => {
                let prob = DesignProblem::from_probs(x.clone(), probs.clone(), true)?;
                Ok(solve(&prob, &self.constraints(score), opts)?.ensure_converged()?.e_z_star)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDesign {
    pub name: String,
    #[serde(flatten)]
    pub strategy: DesignStrategy,
}

impl NamedDesign {
    pub fn new(name: impl Into<String>, strategy: DesignStrategy) -> Self {
        Self { name: name.into(), strategy }
    }
}

/// Plug-in estimator on score splines with per-cell outcome fits.
pub fn default_estimator() -> EstimatorSpec<f64> {
    EstimatorSpec::plugin(NuisanceSpec {
        interaction: Interaction::Cell,
        spline_knots: 4,
        ..NuisanceSpec::default()
    })
}

fn default_designs() -> Vec<NamedDesign> {
    vec![
        NamedDesign::new(
            "optimal",
            DesignStrategy::Optimal {
                budget: Some(0.4),
                monotone: true,
                gain_rho: None,
            },
        ),
        NamedDesign::new("rdd", DesignStrategy::Rdd { budget: 0.4 }),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dgp: DgpConfig,
    pub designs: Vec<NamedDesign>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub estimator: EstimatorSpec<f64>,
    pub seed: u64,
    pub pilot_fraction: f64,
    pub pilot_e_z: f64,
    pub n_oracle: usize,
    /// Cohort size on which design objectives are compared under the true curves.
    pub objective_n: usize,
    pub solver: SolverOptions<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            designs: default_designs(),
            n_grid: vec![1000, 2000, 4000],
            replications: 250,
            estimator: default_estimator(),
            seed: 0,
            pilot_fraction: 0.2,
            pilot_e_z: 0.5,
            n_oracle: DEFAULT_ORACLE_SIZE,
            objective_n: 2000,
            solver: SolverOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.designs.is_empty() {
            return bad("at least one design is required".into());
        }
        for (i, a) in self.designs.iter().enumerate() {
            if self.designs[..i].iter().any(|b| b.name == a.name) {
                return bad(format!("duplicate design name {:?}", a.name));
            }
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.replications < 2 {
            return bad(format!("replications = {} but at least 2 are needed", self.replications));
        }
        if !(self.pilot_fraction > 0.0 && self.pilot_fraction < 1.0) {
            return bad(format!("pilot_fraction {} outside (0, 1)", self.pilot_fraction));
        }
        if !(0.0..=1.0).contains(&self.pilot_e_z) {
            return bad(format!("pilot_e_z {} outside [0, 1]", self.pilot_e_z));
        }
        for &n in &self.n_grid {
            let (p, m) = self.split(n);
            if p < self.dgp.d || m < self.dgp.d {
                return bad(format!("n = {n} leaves {p} pilot and {m} main rows for d = {}", self.dgp.d));
            }
        }
        if self.n_oracle == 0 || self.objective_n < self.dgp.d {
            return bad("n_oracle and objective_n must be positive and objective_n >= d".into());
        }
        Ok(())
    }

    /// `(pilot rows, main rows)` of a cell of size `n`.
    pub fn split(&self, n: usize) -> (usize, usize) {
        let p = ((n as f64) * self.pilot_fraction).round() as usize;
        (p, n.saturating_sub(p))
    }

    /// Generator of replicate `rep` in the `n_index`-th grid cell. The stream
    /// does not depend on the design, so designs share pilots, covariates and
    /// outcome noise within a replicate.
    pub fn replicate_rng(&self, n_index: usize, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((n_index as u64) << 32) | rep as u64);
        rng
    }
}

/// One replicate: pilot, compliance fit, design, main study, estimate.
pub fn run_replicate(sim: &SimulationConfig, design: &DesignStrategy, n_index: usize, rep: usize) -> Result<f64> {
    let n = sim.n_grid[n_index];
    let (n_pilot, _) = sim.split(n);
    let mut rng = sim.replicate_rng(n_index, rep);
    let dgp = &sim.dgp;
    let x = covariates(n, dgp.d, &mut rng)?;
    let pilot_rows: Vec<usize> = (0..n_pilot).collect();
    let main_rows: Vec<usize> = (n_pilot..n).collect();
    let (x_pilot, x_main) = (x.select_rows(&pilot_rows), x.select_rows(&main_rows));
    let e_pilot = NudgePropensity::constant(n_pilot, sim.pilot_e_z)?;
    let (pilot, _) = generate_study(dgp, &x_pilot, &e_pilot, &mut rng)?;

    let model = sim.estimator.nuisance.fit_compliance(&pilot)?;
    let probs = predict_probs(&model, &x_main)?;
    let e_main = design.propensity(&x_main, &probs, &x_main.column(dgp.score_col()), &sim.solver)?;
    let (main, _) = generate_study(dgp, &x_main, &e_main, &mut rng)?;

    let full = pilot.merge(&main)?;
    let e_full = e_pilot.concat(&e_main);
    Ok(sim.estimator.run(&full, &e_full)?.tau_late)
}

/// Summary of one `(design, n)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub design: String,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub mean: f64,
    /// Spread around the cell mean, normalized by the successful count so
    /// that `mse = variance + bias²`.
    pub variance: f64,
    pub mse: f64,
    pub bias: f64,
}

impl CellSummary {
    pub fn from_estimates(design: &str, n: usize, outcomes: &[Result<f64>], truth: f64) -> Self {
        let ok: Vec<f64> = outcomes.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let k = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / k;
        let variance = ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
        let mse = ok.iter().map(|v| (v - truth) * (v - truth)).sum::<f64>() / k;
        Self {
            design: design.to_string(),
            n,
            replications: outcomes.len(),
            failures: outcomes.len() - ok.len(),
            mean,
            variance,
            mse,
            bias: mean - truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRow {
    pub design: String,
    pub objective: f64,
    /// Relative to the unconstrained closed-form optimum.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub true_late: LateOracle,
    pub cells: Vec<CellSummary>,
    pub objectives: Vec<ObjectiveRow>,
    /// Per-cell error messages of failed replicates, keyed `(design, n, rep)`.
    pub failures: Vec<(String, usize, usize, String)>,
}

impl SimulationReport {
    pub fn cell(&self, design: &str, n: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.design == design && c.n == n)
    }
}

/// Objective of every design on a fresh cohort of `objective_n` rows under
/// the true compliance curves, relative to the unconstrained optimum.
pub fn design_objectives(sim: &SimulationConfig) -> Result<Vec<ObjectiveRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(u64::MAX);
    let x = covariates(sim.objective_n, sim.dgp.d, &mut rng)?;
    let score = x.column(sim.dgp.score_col());
    let probs = compliance_curves(&score, &sim.dgp.compliance_curves)?;
    let prob = DesignProblem::from_probs(x.clone(), probs.clone(), true)?;
    let base = objective(&closed_form_unconstrained(&probs), &prob)?;
    let mut rows = Vec::new();
    for d in &sim.designs {
        let value = objective(&d.strategy.propensity(&x, &probs, &score, &sim.solver)?, &prob)?;
        rows.push(ObjectiveRow {
            design: d.name.clone(),
            objective: value,
            ratio: value / base,
        });
    }
    Ok(rows)
}

/// Optimal objectives along the constraint ladder none, monotone, budget,
/// budget+monotone, then budget+monotone with each gain level in turn.
pub fn constraint_ladder(
    x: &Matrix<f64>,
    probs: &ComplianceProbabilities<f64>,
    score: &[f64],
    budget: f64,
    gain_rhos: &[f64],
    opts: &SolverOptions<f64>,
) -> Result<Vec<ObjectiveRow>> {
    let prob = DesignProblem::from_probs(x.clone(), probs.clone(), true)?;
    let base = objective(&closed_form_unconstrained(probs), &prob)?;
    let mut steps = vec![
        ("none".to_string(), None, false, None),
        ("monotone".to_string(), None, true, None),
        ("budget".to_string(), Some(budget), false, None),
        ("budget+monotone".to_string(), Some(budget), true, None),
    ];
    for &rho in gain_rhos {
        steps.push((format!("budget+monotone+gain{rho}"), Some(budget), true, Some(rho)));
    }
    steps
        .into_iter()
        .map(|(name, budget, monotone, gain_rho)| {
            let cons = DesignStrategy::Optimal { budget, monotone, gain_rho }.constraints(score);
            let sol = solve(&prob, &cons, opts)?.ensure_converged()?;
            Ok(ObjectiveRow {
                design: name,
                objective: sol.objective,
                ratio: sol.objective / base,
            })
        })
        .collect()
}

/// Runs every `(design, n, replicate)` in parallel and aggregates per cell
/// against the oracle LATE. Failed replicates are counted, not fatal.
pub fn run_monte_carlo(sim: &SimulationConfig) -> Result<SimulationReport> {
    sim.validate()?;
    let truth = true_late(&sim.dgp, sim.n_oracle, sim.seed)?;
    let tasks: Vec<(usize, usize, usize)> = (0..sim.designs.len())
        .flat_map(|k| (0..sim.n_grid.len()).flat_map(move |j| (0..sim.replications).map(move |r| (k, j, r))))
        .collect();
    let outcomes: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|&(k, j, r)| run_replicate(sim, &sim.designs[k].strategy, j, r))
        .collect();

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for (k, d) in sim.designs.iter().enumerate() {
        for (j, &n) in sim.n_grid.iter().enumerate() {
            let start = (k * sim.n_grid.len() + j) * sim.replications;
            let chunk = &outcomes[start..start + sim.replications];
            for (r, o) in chunk.iter().enumerate() {
                if let Err(e) = o {
                    failures.push((d.name.clone(), n, r, e.to_string()));
                }
            }
            cells.push(CellSummary::from_estimates(&d.name, n, chunk, truth.value));
        }
    }
    Ok(SimulationReport {
        true_late: truth,
        cells,
        objectives: design_objectives(sim)?,
        failures,
    })
}
