//! Semi-synthetic Monte Carlo benchmark of encouragement designs.
//!
//! Double precision only: the generator, oracle and report are plumbing
//! around the generic core.

mod dgp;
mod monte_carlo;
mod report;

pub use dgp::{
    compliance_curves, generate_covariates, generate_dataset, generate_study, true_late, Baseline, ComplianceClass,
    CurveParams, DgpConfig, LateOracle, DEFAULT_GAMMA, DEFAULT_ORACLE_SIZE,
};
pub use monte_carlo::{
    constraint_ladder, default_estimator, design_objectives, run_monte_carlo, run_replicate, CellSummary,
    DesignStrategy, NamedDesign, ObjectiveRow, SimulationConfig, SimulationReport,
};
pub use report::{emit_report, line_plot, METRICS};
