//! Closed-form optima and the deterministic threshold baseline.

use crate::error::{Error, Result};
use crate::model::{ComplianceProbabilities, NudgePropensity};
use crate::scalar::Real;

/// Pointwise unconstrained optimum: push each `e_W` to 1/2 when reachable,
/// otherwise to the nearest endpoint.
pub fn closed_form_unconstrained<T: Real>(probs: &ComplianceProbabilities<T>) -> NudgePropensity<T> {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let v = probs
        .p_at()
        .iter()
        .zip(probs.p_c())
        .map(|(&at, &c)| {
            if at > half {
                T::zero()
            } else if at + c < half {
                T::one()
            } else {
                ((T::one() - two * at) / (two * c)).max(T::zero()).min(T::one())
            }
        })
        .collect();
    NudgePropensity::new(v).expect("values clipped to [0, 1]")
}

/// Optimum under an exact budget `mean(e_W) = μ` when `p_C` is constant and
/// the design contains an intercept: every row gets `e_W,i = μ`, that is
/// `e_Z,i = (μ − p_AT,i)/p_C`. With constant `p_AT` this is the constant
/// `(μ − mean p_AT)/p_C`.
pub fn closed_form_budget<T: Real>(probs: &ComplianceProbabilities<T>, mu: T) -> Result<NudgePropensity<T>> {
    let p_c = probs.p_c();
    let Some(&c0) = p_c.first() else {
        return NudgePropensity::new(Vec::new());
    };
    let tol = T::lit(1e-9);
    if p_c.iter().any(|&c| (c - c0).abs() > tol) {
        return Err(Error::PreconditionViolated("p_C varies across rows".into()));
    }
    let slack = T::lit(1e-12);
    let mut out = Vec::with_capacity(p_c.len());
    for (&at, &c) in probs.p_at().iter().zip(p_c) {
        let e = (mu - at) / c;
        if e < -slack || e > T::one() + slack || !e.is_finite() {
            return Err(Error::PreconditionViolated(format!(
                "budget {mu} needs e_Z = {e} outside [0, 1]"
            )));
        }
        out.push(e.max(T::zero()).min(T::one()));
    }
    NudgePropensity::new(out)
}

/// Rows encouraged by the threshold design: the longest prefix of the
/// score-descending order (ties by row index) whose mean induced `e_W`
/// stays at or below `μ`.
pub fn rdd_selection<T: Real>(score: &[T], mu: T, probs: &ComplianceProbabilities<T>) -> Vec<usize> {
    let n = score.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).expect("finite score").then(a.cmp(&b)));
    let nt = T::from_count(n.max(1));
    let cap = mu * nt + T::lit(1e-12) * nt;
    let mut total: T = probs.p_at().iter().copied().sum();
    let mut k = 0;
    for &i in &idx {
        let next = total + probs.p_c()[i];
        if next > cap {
            break;
        }
        total = next;
        k += 1;
    }
    idx.truncate(k);
    idx
}

/// Deterministic threshold design: `e_Z = 1` on [`rdd_selection`], else 0.
pub fn rdd_design<T: Real>(score: &[T], mu: T, probs: &ComplianceProbabilities<T>) -> NudgePropensity<T> {
    let mut v = vec![T::zero(); score.len()];
    for i in rdd_selection(score, mu, probs) {
        v[i] = T::one();
    }
    NudgePropensity::new(v).expect("binary design")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_cases() {
        let p = ComplianceProbabilities::new(vec![0.1, 0.6, 0.1], vec![0.1, 0.2, 0.7], vec![0.8, 0.2, 0.2]).unwrap();
        let e = closed_form_unconstrained(&p);
        assert_relative_eq!(e.as_slice()[0], 0.5, epsilon = 1e-15);
        assert_eq!(e.as_slice()[1], 0.0);
        assert_eq!(e.as_slice()[2], 1.0);
    }

    #[test]
    fn budget_cases() {
        let p = ComplianceProbabilities::from_at_c(vec![0.1; 5], vec![0.5; 5]).unwrap();
        let e = closed_form_budget(&p, 0.4).unwrap();
        for &v in e.as_slice() {
            assert_relative_eq!(v, 0.6, epsilon = 1e-14);
        }
        let e = closed_form_budget(&p, 0.1).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
        let varying = ComplianceProbabilities::from_at_c(vec![0.1, 0.1], vec![0.5, 0.6]).unwrap();
        assert!(matches!(closed_form_budget(&varying, 0.4), Err(Error::PreconditionViolated(_))));
        assert!(matches!(closed_form_budget(&p, 0.9), Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn threshold_design_examples() {
        let p = ComplianceProbabilities::from_at_c(vec![0.0; 4], vec![1.0; 4]).unwrap();
        let e = rdd_design(&[0.3, 0.9, 0.1, 0.5], 0.5, &p);
        assert_eq!(e.as_slice(), &[0.0, 1.0, 0.0, 1.0]);
        let e = rdd_design(&[0.3, 0.9, 0.1, 0.5], 1.0, &p);
        assert!(e.as_slice().iter().all(|&v| v == 1.0));
        // ties go to the lower row index
        let e = rdd_design(&[0.5, 0.5, 0.5, 0.5], 0.5, &p);
        assert_eq!(e.as_slice(), &[1.0, 1.0, 0.0, 0.0]);
    }
}
