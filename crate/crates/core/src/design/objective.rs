//! The plug-in C-optimal variance criterion
//! `V(e_Z) = n · X̄_Cᵀ (Xᵀ diag(e_W (1 − e_W)) X)⁻¹ X̄_C`
//! and its derivatives with respect to the nudge propensities.

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::{induced_raw, NudgePropensity};
use crate::scalar::{dot, Real};

use super::DesignProblem;

/// One factorization of the information matrix at a given `e_Z`.
pub(crate) struct Evaluation<T> {
    pub value: T,
    /// `M⁻¹ X̄_C`
    pub s: Vec<T>,
    /// Induced treatment propensities (after the optional interior floor).
    pub e_w: Vec<T>,
    pub chol: Cholesky<T>,
}

impl<T: Real> DesignProblem<T> {
    fn scale(&self) -> T {
        if self.scale_n {
            T::from_count(self.n())
        } else {
            T::one()
        }
    }

    /// Factors `M(e) = Xᵀ diag(e_W(1 − e_W)) X`. With `floor = Some(δ)` the
    /// propensities are clamped to `[δ, 1 − δ]` first.
    pub(crate) fn evaluate(&self, e_z: &[T], floor: Option<T>) -> Result<Evaluation<T>> {
        if e_z.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                got: e_z.len(),
            });
        }
        let mut e_w = induced_raw(&self.probs, e_z);
        if let Some(delta) = floor {
            for v in e_w.iter_mut() {
                *v = v.max(delta).min(T::one() - delta);
            }
        }
        let weights: Vec<T> = e_w.iter().map(|&e| e * (T::one() - e)).collect();
        let m = self.x.weighted_gram(&weights);
        let chol = Cholesky::factor(&m).ok_or_else(|| {
            Error::SingularInformation(
                "Xᵀ diag(e_W(1 − e_W)) X is not positive definite".into(),
            )
        })?;
        let s = chol.solve(&self.x_bar_c);
        let value = self.scale() * dot(&self.x_bar_c, &s);
        Ok(Evaluation { value, s, e_w, chol })
    }

    /// `∂V/∂e_i = −scale · p_C,i (1 − 2 e_W,i) (Xᵢ·s)²`
    pub(crate) fn gradient_at(&self, ev: &Evaluation<T>) -> Vec<T> {
        let scale = self.scale();
        let two = T::lit(2.0);
        self.x
            .rows()
            .zip(&ev.e_w)
            .zip(self.probs.p_c())
            .map(|((row, &e), &pc)| {
                let xs = dot(row, &ev.s);
                -scale * pc * (T::one() - two * e) * xs * xs
            })
            .collect()
    }

    /// Exact diagonal of the Hessian in `e_Z`:
    /// `2·scale·p_C² (Xᵢ·s)² [(1 − 2e_W)² Xᵢᵀ M⁻¹ Xᵢ + 1]`.
    pub(crate) fn hessian_diagonal_at(&self, ev: &Evaluation<T>) -> Vec<T> {
        let scale = self.scale();
        let two = T::lit(2.0);
        self.x
            .rows()
            .zip(&ev.e_w)
            .zip(self.probs.p_c())
            .map(|((row, &e), &pc)| {
                let xs = dot(row, &ev.s);
                let lev = ev.chol.quad_inv(row);
                let a = T::one() - two * e;
                two * scale * pc * pc * xs * xs * (a * a * lev + T::one())
            })
            .collect()
    }
}

/// Plug-in variance criterion at `e_z`.
pub fn objective<T: Real>(e_z: &NudgePropensity<T>, prob: &DesignProblem<T>) -> Result<T> {
    Ok(prob.evaluate(e_z.as_slice(), None)?.value)
}

/// Analytic gradient of [`objective`]; one SPD solve plus one pass over the rows.
pub fn gradient<T: Real>(e_z: &NudgePropensity<T>, prob: &DesignProblem<T>) -> Result<Vec<T>> {
    let ev = prob.evaluate(e_z.as_slice(), None)?;
    Ok(prob.gradient_at(&ev))
}

/// `g(e) = e(1 − e)²/σ²₁ + (1 − e)e²/σ²₀`, the expected squared weighted
/// residual of a unit with treatment propensity `e`.
pub fn wls_weight<T: Real>(e_w: T, sigma2_w0: T, sigma2_w1: T) -> T {
    let one = T::one();
    e_w * (one - e_w) * (one - e_w) / sigma2_w1 + (one - e_w) * e_w * e_w / sigma2_w0
}

/// `g''(e) = (6e − 4)/σ²₁ + (2 − 6e)/σ²₀`; nonpositive on `[0, 1]` exactly
/// when `σ²₁/σ²₀ ∈ [1/2, 2]`.
pub fn wls_weight_second_derivative<T: Real>(e_w: T, sigma2_w0: T, sigma2_w1: T) -> T {
    let six = T::lit(6.0);
    (six * e_w - T::lit(4.0)) / sigma2_w1 + (T::lit(2.0) - six * e_w) / sigma2_w0
}

fn check_variances<T: Real>(s0: &[T], s1: &[T]) -> Result<()> {
    if s0.len() != s1.len() {
        return Err(Error::LengthMismatch {
            expected: s0.len(),
            got: s1.len(),
        });
    }
    for (i, (&a, &b)) in s0.iter().zip(s1).enumerate() {
        if !(a > T::zero() && b > T::zero()) || !a.is_finite() || !b.is_finite() {
            return Err(Error::NonpositiveVariance(i));
        }
    }
    Ok(())
}

/// Pulls each row's variance ratio `σ²₁/σ²₀` into `[1/2, 2]` while keeping
/// its total importance `1/σ²₀ + 1/σ²₁`. Rows already inside are untouched;
/// otherwise the smaller variance becomes `τ² = (3/2)/(1/σ²₀ + 1/σ²₁)` and the
/// larger `2τ²`.
pub fn regularize_variances<T: Real>(sigma2_w0: &[T], sigma2_w1: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    check_variances(sigma2_w0, sigma2_w1)?;
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut out0 = Vec::with_capacity(sigma2_w0.len());
    let mut out1 = Vec::with_capacity(sigma2_w0.len());
    for (&s0, &s1) in sigma2_w0.iter().zip(sigma2_w1) {
        let ratio = s1 / s0;
        if ratio >= half && ratio <= two {
            out0.push(s0);
            out1.push(s1);
            continue;
        }
        let tau2 = T::lit(1.5) / (s0.recip() + s1.recip());
        if s0 <= s1 {
            out0.push(tau2);
            out1.push(two * tau2);
        } else {
            out0.push(two * tau2);
            out1.push(tau2);
        }
    }
    Ok((out0, out1))
}

/// Heteroscedastic criterion `scale · X̄_Cᵀ (Xᵀ diag(gᵢ) X)⁻¹ X̄_C` with `gᵢ`
/// from [`wls_weight`]. Requires every ratio in `[1/2, 2]` so that the
/// criterion stays convex.
pub fn objective_wls<T: Real>(
    e_z: &NudgePropensity<T>,
    prob: &DesignProblem<T>,
    sigma2_w0: &[T],
    sigma2_w1: &[T],
) -> Result<T> {
    let n = prob.n();
    if e_z.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: e_z.len() });
    }
    if sigma2_w0.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: sigma2_w0.len() });
    }
    check_variances(sigma2_w0, sigma2_w1)?;
    let slack = T::lit(1e-12);
    for (row, (&s0, &s1)) in sigma2_w0.iter().zip(sigma2_w1).enumerate() {
        let ratio = s1 / s0;
        if ratio < T::lit(0.5) * (T::one() - slack) || ratio > T::lit(2.0) * (T::one() + slack) {
            return Err(Error::RatioOutOfRange {
                row,
                ratio: ratio.as_f64(),
            });
        }
    }
    let e_w = induced_raw(&prob.probs, e_z.as_slice());
    let g: Vec<T> = e_w
        .iter()
        .zip(sigma2_w0.iter().zip(sigma2_w1))
        .map(|(&e, (&s0, &s1))| wls_weight(e, s0, s1))
        .collect();
    let chol = Cholesky::factor(&prob.x.weighted_gram(&g))
        .ok_or_else(|| Error::SingularInformation("weighted information matrix".into()))?;
    Ok(prob.scale() * chol.quad_inv(&prob.x_bar_c))
}
