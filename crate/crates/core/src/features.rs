//! Feature construction for the nuisance fits (compliance logistic regressions
//! and outcome regressions).
//!
//! The basis is the raw covariates, optionally augmented with a cubic
//! truncated-power spline in the score column. Knots are fixed at fit time
//! and stored with the recipe so that a pilot fit can be replayed on a new
//! cohort.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct FeatureRecipe<T> {
    /// Number of raw covariate columns the recipe expects.
    pub input_dim: usize,
    /// Score column the spline terms are built on, if any.
    #[serde(default)]
    pub score_col: Option<usize>,
    #[serde(default)]
    pub knots: Vec<T>,
}

impl<T: Real> FeatureRecipe<T> {
    /// Raw covariates only.
    pub fn identity(input_dim: usize) -> Self {
        Self {
            input_dim,
            score_col: None,
            knots: Vec::new(),
        }
    }

    /// Covariates plus `r², r³` and `(r − k)₊³` at `n_knots` interior
    /// quantiles of the score column of `x`.
    pub fn score_spline(x: &Matrix<T>, score_col: usize, n_knots: usize) -> Result<Self> {
        if score_col >= x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: score_col + 1,
            });
        }
        let mut r = x.column(score_col);
        r.sort_by(|a, b| a.partial_cmp(b).expect("finite score"));
        let n = r.len();
        let knots = (1..=n_knots)
            .filter_map(|j| {
                if n == 0 {
                    return None;
                }
                let q = j as f64 / (n_knots + 1) as f64;
                let pos = ((n - 1) as f64 * q).round() as usize;
                Some(r[pos])
            })
            .collect();
        Ok(Self {
            input_dim: x.ncols(),
            score_col: Some(score_col),
            knots,
        })
    }

    pub fn output_dim(&self) -> usize {
        match self.score_col {
            Some(_) => self.input_dim + 2 + self.knots.len(),
            None => self.input_dim,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.score_col.is_none()
    }

    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        let Some(sc) = self.score_col else {
            return Ok(x.clone());
        };
        let p = self.output_dim();
        let mut out = Matrix::zeros(x.nrows(), p);
        for i in 0..x.nrows() {
            let src = x.row(i);
            let r = src[sc];
            let dst = out.row_mut(i);
            dst[..self.input_dim].copy_from_slice(src);
            dst[self.input_dim] = r * r;
            dst[self.input_dim + 1] = r * r * r;
            for (j, &k) in self.knots.iter().enumerate() {
                let t = (r - k).max(T::zero());
                dst[self.input_dim + 2 + j] = t * t * t;
            }
        }
        Ok(out)
    }
}
