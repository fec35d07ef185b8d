//! Pluggable regression learners for the outcome nuisances.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Real;

pub const DEFAULT_OUTCOME_RIDGE: f64 = 1e-4;

/// A fitted regression function.
pub trait Predictor<T>: Send + Sync {
    fn predict(&self, x: &Matrix<T>) -> Vec<T>;
}

/// Fits a [`Predictor`] from feature rows and responses.
pub trait Learner<T>: Send + Sync {
    fn fit(&self, x: &Matrix<T>, y: &[T]) -> Result<Arc<dyn Predictor<T>>>;

    /// Local learners are fit separately within each treatment cell on the
    /// base covariates instead of once on interacted features.
    fn is_local(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LearnerSpec<T> {
    /// Linear regression with penalty `λ‖β‖²` on every coefficient.
    Ridge { lambda: T },
    /// Mean of the `k` nearest training rows on standardized covariates;
    /// `k = ⌈n^0.4⌉` when unset.
    Knn {
        #[serde(default)]
        k: Option<usize>,
    },
}

impl<T: Real> Default for LearnerSpec<T> {
    fn default() -> Self {
        LearnerSpec::Ridge {
            lambda: T::lit(DEFAULT_OUTCOME_RIDGE),
        }
    }
}

pub struct LinearPredictor<T> {
    pub beta: Vec<T>,
}

impl<T: Real> Predictor<T> for LinearPredictor<T> {
    fn predict(&self, x: &Matrix<T>) -> Vec<T> {
        x.matvec(&self.beta)
    }
}

/// Ridge solution `(XᵀX + λI)⁻¹ Xᵀy`.
pub fn ridge<T: Real>(x: &Matrix<T>, y: &[T], lambda: T) -> Result<Vec<T>> {
    if y.len() != x.nrows() {
        return Err(Error::LengthMismatch { expected: x.nrows(), got: y.len() });
    }
    if lambda < T::zero() {
        return Err(Error::DomainViolation(format!("ridge lambda {lambda} is negative")));
    }
    let mut g = x.gram();
    g.add_diagonal(lambda);
    let tol = if lambda > T::zero() { T::zero() } else { T::rank_tol() };
    let chol = Cholesky::factor_with_tol(&g, tol)
        .ok_or_else(|| Error::SingularInformation("ridge normal equations".into()))?;
    Ok(chol.solve(&x.tmatvec(y)))
}

struct KnnPredictor<T> {
    train: Matrix<T>,
    y: Vec<T>,
    center: Vec<T>,
    scale: Vec<T>,
    k: usize,
}

impl<T: Real> KnnPredictor<T> {
    fn standardize(&self, row: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(row.iter().zip(&self.center).zip(&self.scale).map(|((&v, &c), &s)| (v - c) / s));
    }
}

impl<T: Real> Predictor<T> for KnnPredictor<T> {
    fn predict(&self, x: &Matrix<T>) -> Vec<T> {
        let mut q = Vec::with_capacity(x.ncols());
        let mut dist: Vec<(T, usize)> = Vec::with_capacity(self.train.nrows());
        x.rows()
            .map(|row| {
                self.standardize(row, &mut q);
                dist.clear();
                dist.extend(self.train.rows().enumerate().map(|(j, t)| {
                    let d2: T = t.iter().zip(&q).map(|(&a, &b)| (a - b) * (a - b)).sum();
                    (d2, j)
                }));
                let k = self.k.min(dist.len());
                let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1));
                if k < dist.len() {
                    dist.select_nth_unstable_by(k - 1, cmp);
                }
                dist[..k].iter().map(|&(_, j)| self.y[j]).sum::<T>() / T::from_count(k)
            })
            .collect()
    }
}

impl<T: Real> Learner<T> for LearnerSpec<T> {
    fn fit(&self, x: &Matrix<T>, y: &[T]) -> Result<Arc<dyn Predictor<T>>> {
        match *self {
            LearnerSpec::Ridge { lambda } => Ok(Arc::new(LinearPredictor { beta: ridge(x, y, lambda)? })),
            LearnerSpec::Knn { k } => {
                let n = x.nrows();
                if n == 0 {
                    return Err(Error::PreconditionViolated("nearest neighbours need training rows".into()));
                }
                if y.len() != n {
                    return Err(Error::LengthMismatch { expected: n, got: y.len() });
                }
                let k = k.unwrap_or_else(|| (n as f64).powf(0.4).ceil() as usize).clamp(1, n);
                let nt = T::from_count(n);
                let mut center = Vec::with_capacity(x.ncols());
                let mut scale = Vec::with_capacity(x.ncols());
                for j in 0..x.ncols() {
                    let col = x.column(j);
                    let m = col.iter().copied().sum::<T>() / nt;
                    let v = col.iter().map(|&c| (c - m) * (c - m)).sum::<T>() / nt;
                    center.push(m);
                    scale.push(if v > T::zero() { v.sqrt() } else { T::one() });
                }
                let mut p = KnnPredictor {
                    train: Matrix::zeros(0, 0),
                    y: y.to_vec(),
                    center,
                    scale,
                    k,
                };
                let mut buf = Vec::new();
                let mut data = Vec::with_capacity(n * x.ncols());
                for row in x.rows() {
                    p.standardize(row, &mut buf);
                    data.extend_from_slice(&buf);
                }
                p.train = Matrix::from_row_major(n, x.ncols(), data)?;
                Ok(Arc::new(p))
            }
        }
    }

    fn is_local(&self) -> bool {
        matches!(self, LearnerSpec::Knn { .. })
    }
}
