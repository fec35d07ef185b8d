//! Optimal encouragement designs for instrumental-variable studies.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! crate-root aliases fix the scalar to `f64`, with `*32` variants for `f32`.

pub mod compliance;
pub mod design;
pub mod error;
pub mod estimation;
pub mod features;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Dataset = model::EncouragementDataset<f64>;
pub type Dataset32 = model::EncouragementDataset<f32>;
pub type ComplianceProbabilities = model::ComplianceProbabilities<f64>;
pub type ComplianceProbabilities32 = model::ComplianceProbabilities<f32>;
pub type NudgePropensity = model::NudgePropensity<f64>;
pub type NudgePropensity32 = model::NudgePropensity<f32>;
pub type ComplianceModel = compliance::ComplianceModel<f64>;
pub type ComplianceModel32 = compliance::ComplianceModel<f32>;
pub type DesignProblem = design::DesignProblem<f64>;
pub type DesignProblem32 = design::DesignProblem<f32>;
pub type ConstraintSet = design::ConstraintSet<f64>;
pub type ConstraintSet32 = design::ConstraintSet<f32>;
pub type DesignSolution = design::DesignSolution<f64>;
pub type DesignSolution32 = design::DesignSolution<f32>;
pub type SolverOptions = design::SolverOptions<f64>;
pub type SolverOptions32 = design::SolverOptions<f32>;
pub type LateEstimate = estimation::LateEstimate<f64>;
pub type LateEstimate32 = estimation::LateEstimate<f32>;
pub type NuisanceSpec = estimation::NuisanceSpec<f64>;
pub type NuisanceSpec32 = estimation::NuisanceSpec<f32>;
pub type EstimatorSpec = estimation::EstimatorSpec<f64>;
pub type EstimatorSpec32 = estimation::EstimatorSpec<f32>;
