//! Estimation of the complier treatment effect from completed-study data.

mod estimators;
mod learner;
mod outcome;

pub use estimators::{
    bootstrap_ci, estimate_gamma_crossfit, estimate_gamma_plugin, estimate_gamma_wls, fold_assignment, plugin_pipeline,
    wls_pipeline, ConfidenceInterval, EstimatorKind, EstimatorSpec, LateEstimate, Method, NuisanceSpec, Nuisances,
    MIN_BOOTSTRAP_REPLICATES,
};
pub use learner::{ridge, Learner, LearnerSpec, LinearPredictor, Predictor, DEFAULT_OUTCOME_RIDGE};
pub use outcome::{estimate_variance_fn, fit_outcome_model, m_star_hat, Interaction, OutcomeModel, VARIANCE_FLOOR};
