//! TOML run configurations. Flags override file values, which override
//! the defaults here.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use nudge_core::compliance::{DEFAULT_CLIP_EPSILON, DEFAULT_RIDGE_LAMBDA};
use nudge_core::design::{ConstraintSet, GainReference, SolverOptions};
use nudge_core::estimation::{EstimatorKind, NuisanceSpec};
use nudge_core::model::Schema;
use nudge_core::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

/// Parses `path` as `T`, or returns `T::default()` without a path.
pub fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
}

fn invalid(msg: String) -> Result<()> {
    Err(Error::InvalidConfig(msg))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitPilotConfig {
    pub schema: Option<Schema>,
    pub spline_knots: usize,
    pub ridge_lambda: f64,
    pub clip_epsilon: f64,
}

impl Default for FitPilotConfig {
    fn default() -> Self {
        Self {
            schema: None,
            spline_knots: 0,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
        }
    }
}

impl FitPilotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return invalid(format!("ridge_lambda {} must be finite and >= 0", self.ridge_lambda));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon <= 0.1) {
            return invalid(format!("clip_epsilon {} outside (0, 0.1]", self.clip_epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintsConfig {
    pub budget: Option<f64>,
    pub monotone: bool,
    pub gain_rho: Option<f64>,
    /// Reference gain; derived from the budget-matched threshold rule when unset.
    pub gain_reference: Option<f64>,
}

impl ConstraintsConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(mu) = self.budget {
            if !(0.0..=1.0).contains(&mu) {
                return invalid(format!("budget {mu} outside [0, 1]"));
            }
        }
        if let Some(rho) = self.gain_rho {
            if !(0.0..=1.0).contains(&rho) {
                return invalid(format!("gain_rho {rho} outside [0, 1]"));
            }
        }
        if self.gain_reference.is_some() && self.gain_rho.is_none() {
            return invalid("gain_reference given without gain_rho".into());
        }
        Ok(())
    }

    pub fn to_set(&self, score: Vec<f64>) -> ConstraintSet<f64> {
        let mut cons = ConstraintSet::unconstrained().with_score(score);
        if let Some(mu) = self.budget {
            cons = cons.with_budget(mu);
        }
        if self.monotone {
            cons = cons.monotone();
        }
        if let Some(rho) = self.gain_rho {
            let reference = self.gain_reference.map_or(GainReference::Auto, GainReference::Sum);
            cons = cons.with_gain(rho, reference);
        }
        cons
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub schema: Option<Schema>,
    pub constraints: ConstraintsConfig,
    pub solver: SolverOptions<f64>,
    /// Multiply the objective by `n`.
    pub scale_n: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            schema: None,
            constraints: ConstraintsConfig::default(),
            solver: SolverOptions::default(),
            scale_n: true,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        self.constraints.validate()?;
        if self.solver.max_iter == 0 {
            return invalid("solver.max_iter must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plugin,
    Crossfit,
    Wls,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub schema: Option<Schema>,
    pub method: Method,
    /// Used by `crossfit` only.
    pub folds: usize,
    pub nuisance: NuisanceSpec<f64>,
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            schema: None,
            method: Method::Plugin,
            folds: DEFAULT_FOLDS,
            nuisance: NuisanceSpec::default(),
            bootstrap: 0,
            level: 0.95,
            seed: 0,
        }
    }
}

impl EstimateConfig {
    pub fn kind(&self) -> EstimatorKind {
        match self.method {
            Method::Plugin => EstimatorKind::Plugin,
            Method::Crossfit => EstimatorKind::Crossfit { folds: self.folds },
            Method::Wls => EstimatorKind::Wls,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Crossfit && self.folds < 2 {
            return invalid(format!("crossfit needs at least 2 folds, got {}", self.folds));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return invalid(format!("level {} outside (0, 1)", self.level));
        }
        if self.bootstrap > 0 && self.bootstrap < nudge_core::estimation::MIN_BOOTSTRAP_REPLICATES {
            return invalid(format!(
                "bootstrap = {} but at least {} replicates are required",
                self.bootstrap,
                nudge_core::estimation::MIN_BOOTSTRAP_REPLICATES
            ));
        }
        if !(self.nuisance.clip_epsilon > 0.0 && self.nuisance.clip_epsilon <= 0.1) {
            return invalid(format!("nuisance.clip_epsilon {} outside (0, 0.1]", self.nuisance.clip_epsilon));
        }
        Ok(())
    }
}
