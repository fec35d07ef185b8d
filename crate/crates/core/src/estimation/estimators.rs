//! Residual-on-residual estimators of `γ` and `τ_LATE = X̄_Cᵀγ`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance::{complier_mean, fit_compliance_with, predict_probs, ComplianceModel, DEFAULT_CLIP_EPSILON, DEFAULT_RIDGE_LAMBDA};
use crate::error::{Error, Result};
use crate::features::FeatureRecipe;
use crate::linalg::{Cholesky, Matrix};
use crate::model::{induced_raw, ComplianceProbabilities, EncouragementDataset, NudgePropensity};
use crate::scalar::{dot, Real};

use super::learner::LearnerSpec;
use super::outcome::{estimate_variance_fn, fit_outcome_model, m_star_hat, Interaction, OutcomeModel};
use crate::design::regularize_variances;

pub const MIN_BOOTSTRAP_REPLICATES: usize = 100;
const MAX_REDRAWS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plugin,
    Crossfit,
    Wls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConfidenceInterval<T> {
    pub lo: T,
    pub hi: T,
    pub level: T,
    pub replicates: usize,
    /// Resamples that gave a singular fit and were drawn again.
    pub redrawn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LateEstimate<T> {
    pub gamma_hat: Vec<T>,
    pub x_bar_c: Vec<T>,
    pub tau_late: T,
    pub ci: Option<ConfidenceInterval<T>>,
    pub method: Method,
}

impl<T: Real> LateEstimate<T> {
    pub fn new(gamma_hat: Vec<T>, x_bar_c: Vec<T>, method: Method) -> Self {
        let tau_late = dot(&x_bar_c, &gamma_hat);
        Self {
            gamma_hat,
            x_bar_c,
            tau_late,
            ci: None,
            method,
        }
    }
}

/// Solves `Σ wᵢ Dᵢ² XᵢXᵢᵀ γ = Σ wᵢ Dᵢ Xᵢ rᵢ` over `rows`.
pub(crate) fn residual_regression<T: Real>(x: &Matrix<T>, d: &[T], resid: &[T], weights: Option<&[T]>, rows: &[usize]) -> Result<Vec<T>> {
    let p = x.ncols();
    let mut a = Matrix::zeros(p, p);
    let mut b = vec![T::zero(); p];
    for &i in rows {
        let wi = weights.map_or(T::one(), |w| w[i]);
        let xi = x.row(i);
        let dd = wi * d[i] * d[i];
        let dr = wi * d[i] * resid[i];
        for j in 0..p {
            b[j] = b[j] + dr * xi[j];
            let s = dd * xi[j];
            let row = a.row_mut(j);
            for k in 0..=j {
                row[k] = row[k] + s * xi[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            let v = a.row(j)[k];
            a.row_mut(k)[j] = v;
        }
    }
    let chol = Cholesky::factor(&a).ok_or_else(|| Error::SingularInformation("Xᵀ D² X is not positive definite".into()))?;
    Ok(chol.solve(&b))
}

fn treatment_residual<T: Real>(w: &[bool], e_w: &[T]) -> Vec<T> {
    w.iter().zip(e_w).map(|(&wi, &e)| if wi { T::one() - e } else { -e }).collect()
}

fn check_lengths<T: Real>(data: &EncouragementDataset<T>, probs: &ComplianceProbabilities<T>, e_z: &NudgePropensity<T>) -> Result<()> {
    for got in [probs.len(), e_z.len()] {
        if got != data.n() {
            return Err(Error::LengthMismatch { expected: data.n(), got });
        }
    }
    Ok(())
}

/// `γ̂ = (XᵀD̂²X)⁻¹XᵀD̂(Y − m̂*)` with `D̂ = diag(W − ê_W)`.
pub fn estimate_gamma_plugin<T: Real>(
    data: &EncouragementDataset<T>,
    probs: &ComplianceProbabilities<T>,
    e_z: &NudgePropensity<T>,
    model: &OutcomeModel<T>,
) -> Result<LateEstimate<T>> {
    check_lengths(data, probs, e_z)?;
    let y = data.require_y()?;
    let e_w = induced_raw(probs, e_z.as_slice());
    let m_star = m_star_hat(model, probs, data, e_z)?;
    let resid: Vec<T> = y.iter().zip(&m_star).map(|(&a, &b)| a - b).collect();
    let d = treatment_residual(data.w(), &e_w);
    let rows: Vec<usize> = (0..data.n()).collect();
    let gamma = residual_regression(data.x(), &d, &resid, None, &rows)?;
    let x_bar_c = complier_mean(data.x(), probs)?.x_bar_c;
    Ok(LateEstimate::new(gamma, x_bar_c, Method::Plugin))
}

/// Weighted variant with weights `1/σ̂²(Xᵢ, Wᵢ)` and response `Y − m̂*`.
pub fn estimate_gamma_wls<T: Real>(
    data: &EncouragementDataset<T>,
    probs: &ComplianceProbabilities<T>,
    e_z: &NudgePropensity<T>,
    model: &OutcomeModel<T>,
    sigma2_w0: &[T],
    sigma2_w1: &[T],
) -> Result<LateEstimate<T>> {
    check_lengths(data, probs, e_z)?;
    for s in [sigma2_w0, sigma2_w1] {
        if s.len() != data.n() {
            return Err(Error::LengthMismatch { expected: data.n(), got: s.len() });
        }
    }
    let weights: Vec<T> = (0..data.n())
        .map(|i| {
            let s = if data.w()[i] { sigma2_w1[i] } else { sigma2_w0[i] };
            if s > T::zero() && s.is_finite() {
                Ok(s.recip())
            } else {
                Err(Error::NonpositiveVariance(i))
            }
        })
        .collect::<Result<_>>()?;
    let y = data.require_y()?;
    let e_w = induced_raw(probs, e_z.as_slice());
    let m_star = m_star_hat(model, probs, data, e_z)?;
    let resid: Vec<T> = y.iter().zip(&m_star).map(|(&a, &b)| a - b).collect();
    let d = treatment_residual(data.w(), &e_w);
    let rows: Vec<usize> = (0..data.n()).collect();
    let gamma = residual_regression(data.x(), &d, &resid, Some(&weights), &rows)?;
    let x_bar_c = complier_mean(data.x(), probs)?.x_bar_c;
    Ok(LateEstimate::new(gamma, x_bar_c, Method::Wls))
}

/// How the nuisance functions are fit from completed-study data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", default, deny_unknown_fields)]
pub struct NuisanceSpec<T> {
    pub learner: LearnerSpec<T>,
    pub interaction: Interaction,
    /// Interior knots of a cubic spline in the score column, shared by the
    /// compliance and outcome features; 0 keeps the raw covariates.
    pub spline_knots: usize,
    pub compliance_ridge: T,
    pub clip_epsilon: T,
}

impl<T: Real> Default for NuisanceSpec<T> {
    fn default() -> Self {
        Self {
            learner: LearnerSpec::default(),
            interaction: Interaction::Additive,
            spline_knots: 0,
            compliance_ridge: T::lit(DEFAULT_RIDGE_LAMBDA),
            clip_epsilon: T::lit(DEFAULT_CLIP_EPSILON),
        }
    }
}

/// Fitted compliance and outcome nuisances.
#[derive(Clone)]
pub struct Nuisances<T> {
    pub compliance: ComplianceModel<T>,
    pub outcome: OutcomeModel<T>,
}

impl<T: Real> NuisanceSpec<T> {
    pub fn recipe(&self, data: &EncouragementDataset<T>) -> Result<FeatureRecipe<T>> {
        if self.spline_knots == 0 {
            Ok(FeatureRecipe::identity(data.d()))
        } else {
            FeatureRecipe::score_spline(data.x(), data.score_col(), self.spline_knots)
        }
    }

    pub fn fit_compliance(&self, data: &EncouragementDataset<T>) -> Result<ComplianceModel<T>> {
        fit_compliance_with(data, self.recipe(data)?, self.compliance_ridge, self.clip_epsilon)
    }

    pub fn fit_outcome(&self, data: &EncouragementDataset<T>) -> Result<OutcomeModel<T>> {
        fit_outcome_model(data, &self.learner, self.recipe(data)?, self.interaction)
    }

    pub fn fit(&self, data: &EncouragementDataset<T>) -> Result<Nuisances<T>> {
        Ok(Nuisances {
            compliance: self.fit_compliance(data)?,
            outcome: self.fit_outcome(data)?,
        })
    }
}

/// Fits every nuisance on `data` itself and applies [`estimate_gamma_plugin`].
/// With `probs` given the compliance fit is skipped.
pub fn plugin_pipeline<T: Real>(
    data: &EncouragementDataset<T>,
    e_z: &NudgePropensity<T>,
    spec: &NuisanceSpec<T>,
    probs: Option<&ComplianceProbabilities<T>>,
) -> Result<LateEstimate<T>> {
    let probs = match probs {
        Some(p) => p.clone(),
        None => predict_probs(&spec.fit_compliance(data)?, data.x())?,
    };
    let model = spec.fit_outcome(data)?;
    estimate_gamma_plugin(data, &probs, e_z, &model)
}

/// Heteroscedastic pipeline: plug-in nuisances, estimated and regularized
/// variance functions, then [`estimate_gamma_wls`]. Also returns the
/// regularized variances.
pub fn wls_pipeline<T: Real>(
    data: &EncouragementDataset<T>,
    e_z: &NudgePropensity<T>,
    spec: &NuisanceSpec<T>,
    probs: Option<&ComplianceProbabilities<T>>,
) -> Result<(LateEstimate<T>, Vec<T>, Vec<T>)> {
    let probs = match probs {
        Some(p) => p.clone(),
        None => predict_probs(&spec.fit_compliance(data)?, data.x())?,
    };
    let model = spec.fit_outcome(data)?;
    let (s0, s1) = estimate_variance_fn(data, &model, &spec.learner)?;
    let (s0, s1) = regularize_variances(&s0, &s1)?;
    let est = estimate_gamma_wls(data, &probs, e_z, &model, &s0, &s1)?;
    Ok((est, s0, s1))
}

/// Seeded partition of `0..n` into `k` folds of near-equal size.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < 2 * k {
        return Err(Error::FoldTooSmall { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Per-row treatment propensity and `m̂*` from one fold's nuisances.
pub(crate) struct RowNuisance<T> {
    pub e_w: Vec<T>,
    pub m_star: Vec<T>,
}

/// Cross-fit estimate from per-fold nuisance predictions on all rows:
/// fold `k` uses the average over the other folds' predictions and the
/// final `γ̂` averages the per-fold solutions.
pub(crate) fn crossfit_from_nuisances<T: Real>(
    data: &EncouragementDataset<T>,
    folds: &[Vec<usize>],
    per_fold: &[RowNuisance<T>],
    x_bar_c: Vec<T>,
) -> Result<LateEstimate<T>> {
    let y = data.require_y()?;
    let k = folds.len();
    let others = T::from_count(k - 1);
    let mut e_w = vec![T::zero(); data.n()];
    let mut m_star = vec![T::zero(); data.n()];
    for (f, rows) in folds.iter().enumerate() {
        for &i in rows {
            let mut se = T::zero();
            let mut sm = T::zero();
            for (g, nu) in per_fold.iter().enumerate() {
                if g != f {
                    se = se + nu.e_w[i];
                    sm = sm + nu.m_star[i];
                }
            }
            e_w[i] = se / others;
            m_star[i] = sm / others;
        }
    }
    let d = treatment_residual(data.w(), &e_w);
    let resid: Vec<T> = y.iter().zip(&m_star).map(|(&a, &b)| a - b).collect();
    let gammas = folds
        .iter()
        .map(|rows| residual_regression(data.x(), &d, &resid, None, rows))
        .collect::<Result<Vec<_>>>()?;
    let p = data.d();
    let gamma: Vec<T> = (0..p)
        .map(|j| gammas.iter().map(|g| g[j]).sum::<T>() / T::from_count(k))
        .collect();
    Ok(LateEstimate::new(gamma, x_bar_c, Method::Crossfit))
}

/// K-fold cross-fit estimator. Nuisances are fit separately on each fold;
/// with `probs` given the compliance probabilities are reused rather than
/// refit per fold. `X̄_C` uses compliance fitted on all rows (or `probs`).
pub fn estimate_gamma_crossfit<T: Real>(
    data: &EncouragementDataset<T>,
    e_z: &NudgePropensity<T>,
    spec: &NuisanceSpec<T>,
    k: usize,
    seed: u64,
    probs: Option<&ComplianceProbabilities<T>>,
) -> Result<LateEstimate<T>> {
    if e_z.len() != data.n() {
        return Err(Error::LengthMismatch { expected: data.n(), got: e_z.len() });
    }
    let folds = fold_assignment(data.n(), k, seed)?;
    let recipe = spec.recipe(data)?;
    let per_fold = folds
        .par_iter()
        .map(|rows| {
            let part = data.select_rows(rows);
            let fold_probs = match probs {
                Some(p) => p.clone(),
                None => {
                    let cm = fit_compliance_with(&part, recipe.clone(), spec.compliance_ridge, spec.clip_epsilon)?;
                    predict_probs(&cm, data.x())?
                }
            };
            let model = fit_outcome_model(&part, &spec.learner, recipe.clone(), spec.interaction)?;
            Ok(RowNuisance {
                e_w: induced_raw(&fold_probs, e_z.as_slice()),
                m_star: m_star_hat(&model, &fold_probs, data, e_z)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let full_probs = match probs {
        Some(p) => p.clone(),
        None => predict_probs(&spec.fit_compliance(data)?, data.x())?,
    };
    let x_bar_c = complier_mean(data.x(), &full_probs)?.x_bar_c;
    crossfit_from_nuisances(data, &folds, &per_fold, x_bar_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", deny_unknown_fields)]
pub enum EstimatorKind {
    Plugin,
    Crossfit { folds: usize },
    Wls,
}

/// An estimator with its nuisance configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct EstimatorSpec<T> {
    pub kind: EstimatorKind,
    #[serde(default)]
    pub nuisance: NuisanceSpec<T>,
    /// Seed of the fold shuffle.
    #[serde(default)]
    pub seed: u64,
}

impl<T: Real> EstimatorSpec<T> {
    pub fn plugin(nuisance: NuisanceSpec<T>) -> Self {
        Self { kind: EstimatorKind::Plugin, nuisance, seed: 0 }
    }

    pub fn crossfit(nuisance: NuisanceSpec<T>, folds: usize, seed: u64) -> Self {
        Self { kind: EstimatorKind::Crossfit { folds }, nuisance, seed }
    }

    pub fn run(&self, data: &EncouragementDataset<T>, e_z: &NudgePropensity<T>) -> Result<LateEstimate<T>> {
        match self.kind {
            EstimatorKind::Plugin => plugin_pipeline(data, e_z, &self.nuisance, None),
            EstimatorKind::Crossfit { folds } => estimate_gamma_crossfit(data, e_z, &self.nuisance, folds, self.seed, None),
            EstimatorKind::Wls => Ok(wls_pipeline(data, e_z, &self.nuisance, None)?.0),
        }
    }
}

/// Linear-interpolation sample quantile of sorted data.
pub(crate) fn quantile_sorted<T: Real>(sorted: &[T], q: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * T::from_count(n - 1);
    let lo = pos.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = pos - T::from_count(lo);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Row-resampling percentile bootstrap of `τ̂_LATE`. Replicate `b` draws
/// from its own ChaCha stream of `seed`, so results do not depend on
/// scheduling. Resamples whose fit fails are drawn again from the same stream.
pub fn bootstrap_ci<T: Real>(
    data: &EncouragementDataset<T>,
    e_z: &NudgePropensity<T>,
    estimator: &EstimatorSpec<T>,
    b: usize,
    level: T,
    seed: u64,
) -> Result<ConfidenceInterval<T>> {
    if b < MIN_BOOTSTRAP_REPLICATES {
        return Err(Error::PreconditionViolated(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPLICATES} replicates, got {b}"
        )));
    }
    if !(level > T::zero() && level < T::one()) {
        return Err(Error::DomainViolation(format!("level {level} outside (0, 1)")));
    }
    if e_z.len() != data.n() {
        return Err(Error::LengthMismatch { expected: data.n(), got: e_z.len() });
    }
    let n = data.n();
    let draws = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            for redraw in 0..=MAX_REDRAWS {
                let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let part = data.select_rows(&idx);
                if let Ok(est) = estimator.run(&part, &e_z.select_rows(&idx)) {
                    if est.tau_late.is_finite() {
                        return Ok((est.tau_late, redraw));
                    }
                }
            }
            Err(Error::ResampleDegenerate { replicate: rep, redraws: MAX_REDRAWS })
        })
        .collect::<Result<Vec<_>>>()?;
    let redrawn = draws.iter().map(|d| d.1).sum();
    let mut taus: Vec<T> = draws.into_iter().map(|d| d.0).collect();
    taus.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let alpha = (T::one() - level) / T::lit(2.0);
    Ok(ConfidenceInterval {
        lo: quantile_sorted(&taus, alpha),
        hi: quantile_sorted(&taus, T::one() - alpha),
        level,
        replicates: b,
        redrawn,
    })
}
