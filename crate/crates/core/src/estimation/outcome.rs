//! Outcome regression `m(X, Z, W) = E[Y | X, Z, W]` and the derived nuisances.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureRecipe;
use crate::linalg::Matrix;
use crate::model::{induced_raw, ComplianceProbabilities, EncouragementDataset, NudgePropensity};
use crate::scalar::Real;

use super::learner::{Learner, Predictor};

pub const VARIANCE_FLOOR: f64 = 1e-8;

/// How `Z` and `W` enter the outcome features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// One fit on `(1, Z, W, B, Z·B, W·B)`.
    #[default]
    Additive,
    /// Separate fits on `(1, B)` within each `(Z, W)` cell.
    Cell,
}

enum Fitted<T> {
    Global(Arc<dyn Predictor<T>>),
    /// Indexed by `2z + w`.
    Cells([Option<Arc<dyn Predictor<T>>>; 4]),
}

impl<T> Clone for Fitted<T> {
    fn clone(&self) -> Self {
        match self {
            Fitted::Global(p) => Fitted::Global(Arc::clone(p)),
            Fitted::Cells(c) => Fitted::Cells(c.clone()),
        }
    }
}

#[derive(Clone)]
pub struct OutcomeModel<T> {
    recipe: FeatureRecipe<T>,
    /// Non-constant columns of the recipe output.
    keep: Vec<usize>,
    interaction: Interaction,
    /// Cells were fit by a local learner on covariates without the constant.
    local: bool,
    fitted: Fitted<T>,
}

impl<T: Real> fmt::Debug for OutcomeModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutcomeModel")
            .field("recipe", &self.recipe)
            .field("interaction", &self.interaction)
            .field("per_cell", &matches!(self.fitted, Fitted::Cells(_)))
            .finish()
    }
}

fn cell(z: bool, w: bool) -> usize {
    2 * usize::from(z) + usize::from(w)
}

fn base_features<T: Real>(recipe: &FeatureRecipe<T>, keep: &[usize], x: &Matrix<T>) -> Result<Matrix<T>> {
    let b = recipe.apply(x)?;
    let mut out = Matrix::zeros(b.nrows(), keep.len() + 1);
    for i in 0..b.nrows() {
        let src = b.row(i);
        let dst = out.row_mut(i);
        dst[0] = T::one();
        for (k, &j) in keep.iter().enumerate() {
            dst[k + 1] = src[j];
        }
    }
    Ok(out)
}

/// `(1, z, w, B, z·B, w·B)` per row, where `base` already leads with the constant.
fn additive_features<T: Real>(base: &Matrix<T>, z: &[bool], w: &[bool]) -> Matrix<T> {
    let p = base.ncols() - 1;
    let mut out = Matrix::zeros(base.nrows(), 3 + 3 * p);
    for i in 0..base.nrows() {
        let b = &base.row(i)[1..];
        let (zi, wi) = (T::from_count(usize::from(z[i])), T::from_count(usize::from(w[i])));
        let dst = out.row_mut(i);
        dst[0] = T::one();
        dst[1] = zi;
        dst[2] = wi;
        for (k, &v) in b.iter().enumerate() {
            dst[3 + k] = v;
            dst[3 + p + k] = zi * v;
            dst[3 + 2 * p + k] = wi * v;
        }
    }
    out
}

fn constant_columns<T: Real>(m: &Matrix<T>) -> Vec<bool> {
    (0..m.ncols())
        .map(|j| {
            let first = m.row(0)[j];
            m.rows().all(|r| r[j] == first)
        })
        .collect()
}

pub(crate) fn fit_outcome_raw<T: Real>(
    x: &Matrix<T>,
    z: &[bool],
    w: &[bool],
    y: &[T],
    learner: &dyn Learner<T>,
    recipe: FeatureRecipe<T>,
    interaction: Interaction,
) -> Result<OutcomeModel<T>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::PreconditionViolated("outcome fit needs rows".into()));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: y.len() });
    }
    let raw = recipe.apply(x)?;
    let constant = constant_columns(&raw);
    let keep: Vec<usize> = (0..raw.ncols()).filter(|&j| !constant[j]).collect();
    let base = base_features(&recipe, &keep, x)?;
    let fitted = if interaction == Interaction::Cell || learner.is_local() {
        let mut cells: [Option<Arc<dyn Predictor<T>>>; 4] = [None, None, None, None];
        for (c, slot) in cells.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..n).filter(|&i| cell(z[i], w[i]) == c).collect();
            if idx.is_empty() {
                continue;
            }
            let yc: Vec<T> = idx.iter().map(|&i| y[i]).collect();
            let xc = if learner.is_local() {
                // distance learners ignore the constant column
                let b = base.select_rows(&idx);
                Matrix::from_columns(&(1..b.ncols()).map(|j| b.column(j)).collect::<Vec<_>>())
                    .unwrap_or_else(|_| Matrix::zeros(idx.len(), 0))
            } else {
                base.select_rows(&idx)
            };
            *slot = Some(learner.fit(&xc, &yc)?);
        }
        Fitted::Cells(cells)
    } else {
        Fitted::Global(learner.fit(&additive_features(&base, z, w), y)?)
    };
    Ok(OutcomeModel {
        recipe,
        keep,
        interaction,
        local: learner.is_local(),
        fitted,
    })
}

/// Regresses `Y` on the outcome features of `data`.
pub fn fit_outcome_model<T: Real>(
    data: &EncouragementDataset<T>,
    learner: &dyn Learner<T>,
    recipe: FeatureRecipe<T>,
    interaction: Interaction,
) -> Result<OutcomeModel<T>> {
    fit_outcome_raw(data.x(), data.z(), data.w(), data.require_y()?, learner, recipe, interaction)
}

impl<T: Real> OutcomeModel<T> {
    pub fn interaction(&self) -> Interaction {
        self.interaction
    }

    /// Predictions at observed `(z, w)` per row.
    pub fn predict(&self, x: &Matrix<T>, z: &[bool], w: &[bool]) -> Result<Vec<T>> {
        let n = x.nrows();
        if z.len() != n || w.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: z.len().min(w.len()) });
        }
        let base = base_features(&self.recipe, &self.keep, x)?;
        match &self.fitted {
            Fitted::Global(p) => Ok(p.predict(&additive_features(&base, z, w))),
            Fitted::Cells(cells) => {
                let mut out = vec![T::zero(); n];
                for (c, slot) in cells.iter().enumerate() {
                    let idx: Vec<usize> = (0..n).filter(|&i| cell(z[i], w[i]) == c).collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let pred = self.cell_predict(slot, c, &base.select_rows(&idx))?;
                    for (&i, v) in idx.iter().zip(pred) {
                        out[i] = v;
                    }
                }
                Ok(out)
            }
        }
    }

    fn cell_predict(&self, slot: &Option<Arc<dyn Predictor<T>>>, c: usize, base: &Matrix<T>) -> Result<Vec<T>> {
        let p = slot.as_ref().ok_or(Error::EmptyCell {
            z: (c / 2) as u8,
            w: (c % 2) as u8,
        })?;
        if self.local {
            let cols: Vec<Vec<T>> = (1..base.ncols()).map(|j| base.column(j)).collect();
            let stripped = Matrix::from_columns(&cols).unwrap_or_else(|_| Matrix::zeros(base.nrows(), 0));
            return Ok(p.predict(&stripped));
        }
        Ok(p.predict(base))
    }

    /// `m̂(X, z, w)` with both indicators forced for every row.
    pub fn predict_forced(&self, x: &Matrix<T>, z: bool, w: bool) -> Result<Vec<T>> {
        let n = x.nrows();
        match &self.fitted {
            Fitted::Global(_) => self.predict(x, &vec![z; n], &vec![w; n]),
            Fitted::Cells(cells) => {
                let base = base_features(&self.recipe, &self.keep, x)?;
                let c = cell(z, w);
                self.cell_predict(&cells[c], c, &base)
            }
        }
    }

    /// `m̂(X, z) = m̂(X, z, 1)·P(W = 1 | X, z) + m̂(X, z, 0)·P(W = 0 | X, z)`
    /// with `P(W = 1 | X, 1) = p_AT + p_C` and `P(W = 1 | X, 0) = p_AT`.
    pub fn predict_marginal(&self, x: &Matrix<T>, probs: &ComplianceProbabilities<T>, z: bool) -> Result<Vec<T>> {
        if probs.len() != x.nrows() {
            return Err(Error::LengthMismatch { expected: x.nrows(), got: probs.len() });
        }
        let n = x.nrows();
        let p1: Vec<T> = (0..n)
            .map(|i| {
                let p = if z { probs.p_at()[i] + probs.p_c()[i] } else { probs.p_at()[i] };
                p.min(T::one())
            })
            .collect();
        // a cell with zero weight on every row is never evaluated
        let m1 = if p1.iter().any(|&p| p > T::zero()) {
            self.predict_forced(x, z, true)?
        } else {
            vec![T::zero(); n]
        };
        let m0 = if p1.iter().any(|&p| p < T::one()) {
            self.predict_forced(x, z, false)?
        } else {
            vec![T::zero(); n]
        };
        Ok((0..n).map(|i| m1[i] * p1[i] + m0[i] * (T::one() - p1[i])).collect())
    }
}

/// `m̂*(X, Z, W) = m̂(X, Z, W) + (ê_W − W)/p̂_C · (m̂(X, 1) − m̂(X, 0))`.
pub fn m_star_hat<T: Real>(
    model: &OutcomeModel<T>,
    probs: &ComplianceProbabilities<T>,
    data: &EncouragementDataset<T>,
    e_z: &NudgePropensity<T>,
) -> Result<Vec<T>> {
    let n = data.n();
    if e_z.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: e_z.len() });
    }
    if probs.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: probs.len() });
    }
    let e_w = induced_raw(probs, e_z.as_slice());
    let m = model.predict(data.x(), data.z(), data.w())?;
    let m1 = model.predict_marginal(data.x(), probs, true)?;
    let m0 = model.predict_marginal(data.x(), probs, false)?;
    Ok(combine_m_star(&m, &m1, &m0, &e_w, data.w(), probs.p_c()))
}

pub(crate) fn combine_m_star<T: Real>(m: &[T], m1: &[T], m0: &[T], e_w: &[T], w: &[bool], p_c: &[T]) -> Vec<T> {
    (0..m.len())
        .map(|i| {
            let wi = if w[i] { T::one() } else { T::zero() };
            m[i] + (e_w[i] - wi) / p_c[i] * (m1[i] - m0[i])
        })
        .collect()
}

/// Per-row `(σ̂²(X, 0), σ̂²(X, 1))`: squared residuals of `model` regressed on
/// `(X, W)` with `learner`, evaluated at forced `W`, floored at `1e-8`.
pub fn estimate_variance_fn<T: Real>(
    data: &EncouragementDataset<T>,
    model: &OutcomeModel<T>,
    learner: &dyn Learner<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let y = data.require_y()?;
    let m = model.predict(data.x(), data.z(), data.w())?;
    let r2: Vec<T> = y.iter().zip(&m).map(|(&a, &b)| (a - b) * (a - b)).collect();
    let no_z = vec![false; data.n()];
    let interaction = model.interaction;
    let var_model = fit_outcome_raw(data.x(), &no_z, data.w(), &r2, learner, model.recipe.clone(), interaction)?;
    let floor = T::lit(VARIANCE_FLOOR);
    let s0 = var_model.predict_forced(data.x(), false, false)?;
    let s1 = var_model.predict_forced(data.x(), false, true)?;
    Ok((
        s0.into_iter().map(|v| v.max(floor)).collect(),
        s1.into_iter().map(|v| v.max(floor)).collect(),
    ))
}
