//! Compliance-class probabilities from pilot data.
//!
//! With no defiers, `P(W = 1 | Z = 0, X) = p_AT(X)` and
//! `P(W = 1 | Z = 1, X) = p_AT(X) + p_C(X)`, so two logistic regressions (one
//! per nudge arm) identify all three class probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureRecipe;
use crate::linalg::{Cholesky, Matrix};
use crate::model::{ComplianceProbabilities, EncouragementDataset};
use crate::scalar::{mean, Real};

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-4;
pub const DEFAULT_CLIP_EPSILON: f64 = 1e-3;

const MAX_NEWTON_ITERS: usize = 100;
const MAX_HALVINGS: usize = 30;

#[inline]
pub(crate) fn sigmoid<T: Real>(eta: T) -> T {
    if eta >= T::zero() {
        T::one() / (T::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Real>(eta: T) -> T {
    eta.max(T::zero()) + (-eta.abs()).exp().ln_1p()
}

fn penalized_loglik<T: Real>(x: &Matrix<T>, y: &[bool], beta: &[T], lambda: T) -> T {
    let ll: T = x
        .rows()
        .zip(y)
        .map(|(row, &yi)| {
            let eta: T = row.iter().zip(beta).map(|(&a, &b)| a * b).sum();
            let lin = if yi { eta } else { T::zero() };
            lin - softplus(eta)
        })
        .sum();
    let pen: T = beta.iter().map(|&b| b * b).sum();
    ll - lambda * pen / T::lit(2.0)
}

/// Ridge-penalized logistic regression by damped Newton (IRLS).
///
/// Maximizes `Σ [yᵢ ηᵢ − log(1 + e^{ηᵢ})] − λ/2 ‖β‖²` with `η = Xβ`. All
/// coefficients, intercept included, are penalized.
pub fn fit_logistic<T: Real>(features: &Matrix<T>, labels: &[bool], ridge_lambda: T) -> Result<Vec<T>> {
    let (m, d) = (features.nrows(), features.ncols());
    if m == 0 {
        return Err(Error::PreconditionViolated("logistic fit needs at least one row".into()));
    }
    if labels.len() != m {
        return Err(Error::LengthMismatch { expected: m, got: labels.len() });
    }
    if !features.is_finite() {
        return Err(Error::DomainViolation("non-finite feature".into()));
    }
    if !(ridge_lambda >= T::zero()) {
        return Err(Error::DomainViolation("ridge_lambda must be nonnegative".into()));
    }
    let step_tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
    let mut beta = vec![T::zero(); d];
    let mut obj = penalized_loglik(features, labels, &beta, ridge_lambda);
    let mut last_step = T::infinity();
    for _ in 0..MAX_NEWTON_ITERS {
        let eta = features.matvec(&beta);
        let p: Vec<T> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<T> = p.iter().map(|&pi| pi * (T::one() - pi)).collect();
        let resid: Vec<T> = labels
            .iter()
            .zip(&p)
            .map(|(&yi, &pi)| if yi { T::one() - pi } else { -pi })
            .collect();
        let mut grad = features.tmatvec(&resid);
        for (g, &b) in grad.iter_mut().zip(&beta) {
            *g = *g - ridge_lambda * b;
        }
        let mut hess = features.weighted_gram(&w);
        hess.add_diagonal(ridge_lambda);
        let chol = Cholesky::factor(&hess).ok_or(Error::SingularHessian)?;
        let step = chol.solve(&grad);

        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + t * s).collect();
            let cand_obj = penalized_loglik(features, labels, &cand, ridge_lambda);
            let slack = T::epsilon() * T::lit(16.0) * obj.abs().max(T::one());
            if cand_obj >= obj - slack {
                accepted = Some((cand, cand_obj));
                break;
            }
            t = t / T::lit(2.0);
        }
        let Some((cand, cand_obj)) = accepted else {
            // No halving improves: at the optimum up to rounding.
            return Ok(beta);
        };
        last_step = beta
            .iter()
            .zip(&cand)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max);
        beta = cand;
        obj = cand_obj;
        if last_step < step_tol {
            return Ok(beta);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON_ITERS,
        detail: format!("last coefficient step {last_step}"),
    })
}

/// Two-arm logistic compliance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct ComplianceModel<T> {
    /// Coefficients of `P(W = 1 | Z = 0, X)`.
    pub beta_z0: Vec<T>,
    /// Coefficients of `P(W = 1 | Z = 1, X)`.
    pub beta_z1: Vec<T>,
    pub ridge_lambda: T,
    pub clip_epsilon: T,
    pub features: FeatureRecipe<T>,
}

/// Fits the two arms on the raw covariates of `pilot`.
pub fn fit_compliance<T: Real>(
    pilot: &EncouragementDataset<T>,
    ridge_lambda: T,
    clip_epsilon: T,
) -> Result<ComplianceModel<T>> {
    fit_compliance_with(pilot, FeatureRecipe::identity(pilot.d()), ridge_lambda, clip_epsilon)
}

/// Fits the two arms on `features.apply(pilot.x())`.
pub fn fit_compliance_with<T: Real>(
    pilot: &EncouragementDataset<T>,
    features: FeatureRecipe<T>,
    ridge_lambda: T,
    clip_epsilon: T,
) -> Result<ComplianceModel<T>> {
    if !(clip_epsilon > T::zero() && clip_epsilon <= T::lit(0.1)) {
        return Err(Error::DomainViolation(format!(
            "clip_epsilon {clip_epsilon} outside (0, 0.1]"
        )));
    }
    let f = features.apply(pilot.x())?;
    let mut betas = Vec::with_capacity(2);
    for arm in [false, true] {
        let idx = pilot.arm(arm);
        if idx.is_empty() {
            return Err(Error::EmptyArm(u8::from(arm)));
        }
        let labels: Vec<bool> = idx.iter().map(|&i| pilot.w()[i]).collect();
        betas.push(fit_logistic(&f.select_rows(&idx), &labels, ridge_lambda)?);
    }
    let beta_z1 = betas.pop().expect("two arms");
    let beta_z0 = betas.pop().expect("two arms");
    Ok(ComplianceModel {
        beta_z0,
        beta_z1,
        ridge_lambda,
        clip_epsilon,
        features,
    })
}

/// Clipping summary for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClipStats {
    /// Rows whose raw complier mass fell below the floor.
    pub floored: usize,
    /// Rows where `p̂(W=1|Z=1) < p̂(W=1|Z=0)`.
    pub crossing: usize,
}

impl<T: Real> ComplianceModel<T> {
    pub fn input_dim(&self) -> usize {
        self.features.input_dim
    }

    fn raw(&self, x: &Matrix<T>) -> Result<(Vec<T>, Vec<T>)> {
        let f = self.features.apply(x)?;
        if f.ncols() != self.beta_z0.len() || f.ncols() != self.beta_z1.len() {
            return Err(Error::DimensionMismatch {
                expected: self.beta_z0.len(),
                got: f.ncols(),
            });
        }
        let at = f.matvec(&self.beta_z0).into_iter().map(sigmoid).collect();
        let atc = f.matvec(&self.beta_z1).into_iter().map(sigmoid).collect();
        Ok((at, atc))
    }

    pub fn clip_stats(&self, x: &Matrix<T>) -> Result<ClipStats> {
        let (at, atc) = self.raw(x)?;
        let mut s = ClipStats { floored: 0, crossing: 0 };
        for (&a, &b) in at.iter().zip(&atc) {
            if b < a {
                s.crossing += 1;
            }
            if b - a < self.clip_epsilon {
                s.floored += 1;
            }
        }
        Ok(s)
    }
}

/// Maps raw arm probabilities to a clipped, renormalized compliance triple.
pub fn clip_triple<T: Real>(p_at_raw: T, p_at_plus_c: T, clip_epsilon: T) -> (T, T, T) {
    let p_c = (p_at_plus_c - p_at_raw).max(clip_epsilon).min(T::one());
    let p_at = p_at_raw.max(T::zero()).min(T::one() - p_c);
    let p_nt = (T::one() - p_at - p_c).max(T::zero());
    (p_at, p_nt, p_c)
}

pub fn predict_probs<T: Real>(model: &ComplianceModel<T>, x: &Matrix<T>) -> Result<ComplianceProbabilities<T>> {
    let (at, atc) = model.raw(x)?;
    let n = at.len();
    let (mut p_at, mut p_nt, mut p_c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (&a, &b) in at.iter().zip(&atc) {
        let (a, nt, c) = clip_triple(a, b, model.clip_epsilon);
        p_at.push(a);
        p_nt.push(nt);
        p_c.push(c);
    }
    ComplianceProbabilities::new(p_at, p_nt, p_c)
}

/// Complier-weighted covariate mean `X̄_C = (1/n) Σ Xᵢ p̂_C(Xᵢ) / p̂_C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ComplierMean<T> {
    pub x_bar_c: Vec<T>,
    pub p_c_marginal: T,
}

pub fn complier_mean<T: Real>(x: &Matrix<T>, probs: &ComplianceProbabilities<T>) -> Result<ComplierMean<T>> {
    if x.nrows() != probs.len() {
        return Err(Error::LengthMismatch {
            expected: x.nrows(),
            got: probs.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::PreconditionViolated("complier mean of an empty sample".into()));
    }
    let p_c_marginal = mean(probs.p_c());
    let n = T::from_count(x.nrows());
    let x_bar_c = x
        .tmatvec(probs.p_c())
        .into_iter()
        .map(|v| v / n / p_c_marginal)
        .collect();
    Ok(ComplierMean { x_bar_c, p_c_marginal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_labels_with_penalty() {
        let x = Matrix::from_rows(&[vec![1.0, 0.2], vec![1.0, -0.4], vec![1.0, 1.3]]).unwrap();
        let beta = fit_logistic(&x, &[false, false, false], 1.0).unwrap();
        for eta in x.matvec(&beta) {
            assert!(sigmoid(eta) < 0.5);
        }
    }

    #[test]
    fn separable_signs_slope() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let beta = fit_logistic(&x, &[false, true], 0.1).unwrap();
        assert!(beta[0] > 0.0);
    }

    #[test]
    fn separable_without_penalty_is_singular_or_diverges() {
        let x = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -0.5], vec![1.0, 0.5], vec![1.0, 1.0]]).unwrap();
        let err = fit_logistic(&x, &[false, false, true, true], 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularHessian | Error::NoConvergence { .. }), "{err}");
    }

    /// Plain undamped Newton with an explicit 2×2 inverse; shares nothing with
    /// the implementation beyond the likelihood itself.
    fn newton_oracle_2d(x: &[(f64, f64)], y: &[bool], lambda: f64) -> (f64, f64) {
        let (mut b0, mut b1) = (0.0f64, 0.0f64);
        for _ in 0..200 {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (-lambda * b0, -lambda * b1, lambda, 0.0, lambda);
            for (&(u, v), &yi) in x.iter().zip(y) {
                let p = 1.0 / (1.0 + (-(b0 * u + b1 * v)).exp());
                let r = f64::from(u8::from(yi)) - p;
                g0 += r * u;
                g1 += r * v;
                let w = p * (1.0 - p);
                h00 += w * u * u;
                h01 += w * u * v;
                h11 += w * v * v;
            }
            let det = h00 * h11 - h01 * h01;
            b0 += (h11 * g0 - h01 * g1) / det;
            b1 += (h00 * g1 - h01 * g0) / det;
        }
        (b0, b1)
    }

    #[test]
    fn matches_independent_newton_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (true0, true1) = (-0.4, 1.3);
        let mut rows = Vec::new();
        let mut pts = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let v: f64 = rng.gen_range(-2.0..2.0);
            let p = 1.0 / (1.0 + (-(true0 + true1 * v)).exp());
            y.push(rng.gen::<f64>() < p);
            rows.push(vec![1.0, v]);
            pts.push((1.0, v));
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let beta = fit_logistic(&x, &y, 1e-6).unwrap();
        let (o0, o1) = newton_oracle_2d(&pts, &y, 1e-6);
        assert!((beta[0] - o0).abs() < 1e-6 && (beta[1] - o1).abs() < 1e-6, "{beta:?} vs ({o0}, {o1})");
    }

    #[test]
    fn small_ridge_approaches_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = Vec::new();
        let mut pts = Vec::new();
        let mut y = Vec::new();
        for _ in 0..400 {
            let v: f64 = rng.gen_range(-1.0..1.0);
            y.push(rng.gen::<f64>() < 1.0 / (1.0 + (-(0.3 + 0.8 * v)).exp()));
            rows.push(vec![1.0, v]);
            pts.push((1.0, v));
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let (m0, m1) = newton_oracle_2d(&pts, &y, 0.0);
        let mut prev = f64::INFINITY;
        for lambda in [1e-1, 1e-3, 1e-5, 1e-8] {
            let b = fit_logistic(&x, &y, lambda).unwrap();
            let err = (b[0] - m0).abs().max((b[1] - m1).abs());
            assert!(err <= prev + 1e-12);
            prev = err;
        }
        assert!(prev < 1e-7);
    }

    #[test]
    fn zero_coefficients_clip() {
        let model = ComplianceModel {
            beta_z0: vec![0.0],
            beta_z1: vec![0.0],
            ridge_lambda: 1e-4,
            clip_epsilon: 1e-3,
            features: FeatureRecipe::identity(1),
        };
        let p = predict_probs(&model, &Matrix::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert_eq!(p.p_c()[0], 1e-3);
        assert!(p.p_at()[0] <= 1.0 - 1e-3);
        assert_relative_eq!(p.p_at()[0] + p.p_nt()[0] + p.p_c()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identities_at_a_row() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let model = ComplianceModel {
            beta_z0: vec![logit(0.1)],
            beta_z1: vec![logit(0.7)],
            ridge_lambda: 0.0,
            clip_epsilon: 1e-3,
            features: FeatureRecipe::identity(1),
        };
        let p = predict_probs(&model, &Matrix::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        assert_relative_eq!(p.p_at()[0], 0.1, epsilon = 1e-12);
        assert_relative_eq!(p.p_c()[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(p.p_nt()[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn crossing_fits_are_floored() {
        let (a, nt, c) = clip_triple(0.6, 0.4, 1e-3);
        assert_eq!(c, 1e-3);
        assert_relative_eq!(a + nt + c, 1.0, epsilon = 1e-12);
        let (a, nt, c) = clip_triple(0.9995, 0.9999, 1e-3);
        assert_eq!(c, 1e-3);
        assert!(a <= 1.0 - c && nt >= 0.0);
        assert_relative_eq!(a + nt + c, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_dimension_mismatch() {
        let model = ComplianceModel {
            beta_z0: vec![0.0, 0.0],
            beta_z1: vec![0.0, 0.0],
            ridge_lambda: 0.0,
            clip_epsilon: 1e-3,
            features: FeatureRecipe::identity(2),
        };
        assert!(matches!(
            predict_probs(&model, &Matrix::<f64>::zeros(3, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn complier_mean_examples() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let probs = ComplianceProbabilities::from_at_c(vec![0.1, 0.1], vec![0.2, 0.6]).unwrap();
        let cm = complier_mean(&x, &probs).unwrap();
        assert_relative_eq!(cm.p_c_marginal, 0.4, epsilon = 1e-15);
        assert_relative_eq!(cm.x_bar_c[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(cm.x_bar_c[1], 0.75, epsilon = 1e-15);

        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 4.0], vec![1.0, -3.0]]).unwrap();
        let constant = ComplianceProbabilities::from_at_c(vec![0.1; 3], vec![0.3; 3]).unwrap();
        let cm = complier_mean(&x, &constant).unwrap();
        assert_relative_eq!(cm.x_bar_c[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(cm.x_bar_c[1], 1.0, epsilon = 1e-14);
        let varying = ComplianceProbabilities::from_at_c(vec![0.1; 3], vec![0.3, 0.5, 0.05]).unwrap();
        assert_relative_eq!(complier_mean(&x, &varying).unwrap().x_bar_c[0], 1.0, epsilon = 1e-14);
    }
}
