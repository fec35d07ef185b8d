//! Optimal encouragement design.

mod closed_form;
mod objective;
mod projection;
mod solver;

pub use closed_form::{closed_form_budget, closed_form_unconstrained, rdd_design, rdd_selection};
pub use objective::{
    gradient, objective, objective_wls, regularize_variances, wls_weight, wls_weight_second_derivative,
};
pub use projection::{project, ConstraintSet, GainConstraint, GainReference, Polytope, DEFAULT_MAX_SWEEPS};
pub use solver::{solve, DesignSolution, SolveStatus, SolverOptions};

use crate::compliance::complier_mean;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::ComplianceProbabilities;
use crate::scalar::Real;

/// Main-study covariates and predicted compliance, ready for design.
#[derive(Debug, Clone)]
pub struct DesignProblem<T> {
    pub(crate) x: Matrix<T>,
    pub(crate) probs: ComplianceProbabilities<T>,
    pub(crate) x_bar_c: Vec<T>,
    /// Multiply the criterion by `n`.
    pub(crate) scale_n: bool,
}

impl<T: Real> DesignProblem<T> {
    pub fn new(x: Matrix<T>, probs: ComplianceProbabilities<T>, x_bar_c: Vec<T>, scale_n: bool) -> Result<Self> {
        if probs.len() != x.nrows() {
            return Err(Error::LengthMismatch {
                expected: x.nrows(),
                got: probs.len(),
            });
        }
        if x_bar_c.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: x_bar_c.len(),
            });
        }
        if x.nrows() < x.ncols() || Cholesky::factor(&x.gram()).is_none() {
            return Err(Error::SingularInformation("X is not of full column rank".into()));
        }
        Ok(Self { x, probs, x_bar_c, scale_n })
    }

    /// Uses the complier-weighted mean of `x` under `probs` as `X̄_C`.
    pub fn from_probs(x: Matrix<T>, probs: ComplianceProbabilities<T>, scale_n: bool) -> Result<Self> {
        let x_bar_c = complier_mean(&x, &probs)?.x_bar_c;
        Self::new(x, probs, x_bar_c, scale_n)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix<T> {
        &self.x
    }

    pub fn probs(&self) -> &ComplianceProbabilities<T> {
        &self.probs
    }

    pub fn x_bar_c(&self) -> &[T] {
        &self.x_bar_c
    }

    pub fn scale_n(&self) -> bool {
        self.scale_n
    }
}
