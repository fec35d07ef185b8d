//! Feasible region and its projection.
//!
//! The region is the intersection of the box `[0, 1]ⁿ` with up to three extra
//! sets: a budget hyperplane, a monotone cone in score order and a gain
//! halfspace. Each piece has an exact projector; the intersection is handled
//! by Dykstra's alternating scheme. All projectors also work in a diagonal
//! metric `Σ dᵢ (eᵢ − vᵢ)²`, which the scaled solver relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComplianceProbabilities;
use crate::scalar::{dot, max_abs_diff, Real};

use super::closed_form::{closed_form_unconstrained, rdd_selection};

pub const DEFAULT_MAX_SWEEPS: usize = 10_000;

/// Where the gain threshold `ρ · Σ_{i ∈ K} scoreᵢ` takes its reference set `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", rename_all = "snake_case")]
pub enum GainReference<T> {
    /// Threshold design at the active budget, else the rows whose
    /// unconstrained optimum is 1.
    Auto,
    /// Explicit reference sum `Σ_{i ∈ K} scoreᵢ`.
    Sum(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct GainConstraint<T> {
    pub rho: T,
    pub reference: GainReference<T>,
}

/// Constraints beyond the implicit box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct ConstraintSet<T> {
    /// Target mean of the induced treatment propensity.
    #[serde(default)]
    pub budget: Option<T>,
    #[serde(default)]
    pub monotone_in_score: bool,
    #[serde(default)]
    pub gain: Option<GainConstraint<T>>,
    /// Risk score per row; required by the monotone and gain constraints.
    #[serde(default)]
    pub score: Option<Vec<T>>,
}

impl<T: Real> Default for ConstraintSet<T> {
    fn default() -> Self {
        Self {
            budget: None,
            monotone_in_score: false,
            gain: None,
            score: None,
        }
    }
}

impl<T: Real> ConstraintSet<T> {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn with_budget(mut self, mu: T) -> Self {
        self.budget = Some(mu);
        self
    }

    pub fn with_score(mut self, score: Vec<T>) -> Self {
        self.score = Some(score);
        self
    }

    pub fn monotone(mut self) -> Self {
        self.monotone_in_score = true;
        self
    }

    pub fn with_gain(mut self, rho: T, reference: GainReference<T>) -> Self {
        self.gain = Some(GainConstraint { rho, reference });
        self
    }

    pub fn is_box_only(&self) -> bool {
        self.budget.is_none() && !self.monotone_in_score && self.gain.is_none()
    }
}

/// Resolved gain halfspace `Σ scoreᵢ eᵢ ≥ threshold`.
#[derive(Debug, Clone)]
struct Halfspace<T> {
    normal: Vec<T>,
    threshold: T,
}

/// Budget hyperplane `Σ p_C,i eᵢ = rhs`.
#[derive(Debug, Clone)]
struct Hyperplane<T> {
    normal: Vec<T>,
    rhs: T,
}

/// The feasible region with every constraint resolved to concrete data.
#[derive(Debug, Clone)]
pub struct Polytope<T> {
    n: usize,
    budget: Option<Hyperplane<T>>,
    /// Row indices sorted by score ascending, ties by index.
    order: Option<Vec<usize>>,
    gain: Option<Halfspace<T>>,
}

fn sorted_order<T: Real>(score: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| score[a].partial_cmp(&score[b]).expect("finite score").then(a.cmp(&b)));
    idx
}

/// Weighted pool-adjacent-violators: nondecreasing fit of `values` in place.
fn pava<T: Real>(values: &mut [T], weights: &[T]) {
    // (weighted mean, total weight, block length)
    let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            let last = blocks.last_mut().expect("nonempty");
            *last = ((m1 * w1 + m2 * w2) / w, w, l1 + l2);
        }
    }
    let mut i = 0;
    for (m, _, len) in blocks {
        for v in &mut values[i..i + len] {
            *v = m;
        }
        i += len;
    }
}

impl<T: Real> Polytope<T> {
    /// Resolves `cons` against `probs`. Fails fast when a budget or gain
    /// constraint cannot be met even on its own (or jointly with the budget,
    /// ignoring monotonicity).
    pub fn new(cons: &ConstraintSet<T>, probs: &ComplianceProbabilities<T>) -> Result<Self> {
        let n = probs.len();
        let score = match &cons.score {
            Some(s) => {
                if s.len() != n {
                    return Err(Error::LengthMismatch { expected: n, got: s.len() });
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DomainViolation("score must be finite".into()));
                }
                Some(s.as_slice())
            }
            None => None,
        };
        if (cons.monotone_in_score || cons.gain.is_some()) && score.is_none() {
            return Err(Error::InvalidConfig(
                "monotone and gain constraints need a score vector".into(),
            ));
        }

        let budget = match cons.budget {
            Some(mu) => {
                if !(mu >= T::zero() && mu <= T::one()) {
                    return Err(Error::DomainViolation(format!("budget {mu} outside [0, 1]")));
                }
                let nt = T::from_count(n);
                let base: T = probs.p_at().iter().copied().sum();
                let top: T = base + probs.p_c().iter().copied().sum::<T>();
                let slack = T::lit(1e-12) * nt.max(T::one());
                let rhs = nt * mu - base;
                if nt * mu < base - slack || nt * mu > top + slack {
                    return Err(Error::Infeasible(format!(
                        "budget {mu} outside the attainable range [{}, {}]",
                        base / nt,
                        top / nt
                    )));
                }
                Some(Hyperplane {
                    normal: probs.p_c().to_vec(),
                    rhs,
                })
            }
            None => None,
        };

        let gain = match (&cons.gain, score) {
            (Some(g), Some(s)) => {
                if !(g.rho >= T::zero() && g.rho <= T::one()) {
                    return Err(Error::DomainViolation(format!("gain rho {} outside [0, 1]", g.rho)));
                }
                let reference = match g.reference {
                    GainReference::Sum(v) => v,
                    GainReference::Auto => match cons.budget {
                        Some(mu) => rdd_selection(s, mu, probs).iter().map(|&i| s[i]).sum(),
                        None => {
                            let star = closed_form_unconstrained(probs);
                            let ones: Vec<usize> = (0..n).filter(|&i| star.as_slice()[i] == T::one()).collect();
                            if ones.is_empty() {
                                return Err(Error::PreconditionViolated(
                                    "gain constraint without a budget needs an explicit reference sum".into(),
                                ));
                            }
                            ones.iter().map(|&i| s[i]).sum()
                        }
                    },
                };
                Some(Halfspace {
                    normal: s.to_vec(),
                    threshold: g.rho * reference,
                })
            }
            _ => None,
        };

        let poly = Self {
            n,
            budget,
            order: if cons.monotone_in_score { score.map(sorted_order) } else { None },
            gain,
        };
        poly.check_gain_reachable()?;
        Ok(poly)
    }

    /// Largest attainable gain over box (and budget, when present).
    fn check_gain_reachable(&self) -> Result<()> {
        let Some(g) = &self.gain else { return Ok(()) };
        let best = match &self.budget {
            None => g.normal.iter().map(|&s| s.max(T::zero())).sum::<T>(),
            Some(h) => {
                // Fractional knapsack with an equality budget: fill by ratio.
                let mut idx: Vec<usize> = (0..self.n).filter(|&i| h.normal[i] > T::zero()).collect();
                idx.sort_by(|&a, &b| {
                    let ra = g.normal[a] / h.normal[a];
                    let rb = g.normal[b] / h.normal[b];
                    rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
                });
                let mut left = h.rhs;
                let mut total: T = (0..self.n)
                    .filter(|&i| h.normal[i] == T::zero())
                    .map(|i| g.normal[i].max(T::zero()))
                    .sum();
                for i in idx {
                    if left <= T::zero() {
                        break;
                    }
                    let take = (left / h.normal[i]).min(T::one());
                    total = total + take * g.normal[i];
                    left = left - take * h.normal[i];
                }
                total
            }
        };
        let slack = T::lit(1e-9) * (g.threshold.abs() + T::one());
        if best + slack < g.threshold {
            return Err(Error::Infeasible(format!(
                "gain threshold {} exceeds the attainable maximum {}",
                g.threshold, best
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Largest violation of any constraint at `e`. Budget and gain slacks are
    /// reported per row so that all measures live on the `[0, 1]` scale.
    pub fn violation(&self, e: &[T]) -> T {
        let nt = T::from_count(self.n.max(1));
        let mut worst = T::zero();
        for &v in e {
            worst = worst.max(-v).max(v - T::one());
        }
        if let Some(h) = &self.budget {
            worst = worst.max((dot(&h.normal, e) - h.rhs).abs() / nt);
        }
        if let Some(order) = &self.order {
            for pair in order.windows(2) {
                worst = worst.max(e[pair[0]] - e[pair[1]]);
            }
        }
        if let Some(g) = &self.gain {
            worst = worst.max((g.threshold - dot(&g.normal, e)) / nt);
        }
        worst
    }

    fn set_count(&self) -> usize {
        1 + self.budget.is_some() as usize + self.order.is_some() as usize + self.gain.is_some() as usize
    }

    /// Applies projector `k` (in the fixed order monotone, gain, budget, box)
    /// in the metric with weights `d`.
    fn apply(&self, k: usize, x: &mut [T], d: &[T], scratch: &mut Vec<T>) {
        let mut sets = [0u8; 4];
        let mut m = 0;
        if self.order.is_some() {
            sets[m] = 0;
            m += 1;
        }
        if self.gain.is_some() {
            sets[m] = 1;
            m += 1;
        }
        if self.budget.is_some() {
            sets[m] = 2;
            m += 1;
        }
        sets[m] = 3;
        match sets[k] {
            0 => {
                let order = self.order.as_ref().expect("monotone");
                scratch.clear();
                scratch.extend(order.iter().map(|&i| x[i]));
                let w: Vec<T> = order.iter().map(|&i| d[i]).collect();
                pava(scratch, &w);
                for (&i, &v) in order.iter().zip(scratch.iter()) {
                    x[i] = v;
                }
            }
            1 => {
                let g = self.gain.as_ref().expect("gain");
                let value = dot(&g.normal, x);
                if value < g.threshold {
                    shift_along(x, &g.normal, d, g.threshold - value);
                }
            }
            2 => {
                let h = self.budget.as_ref().expect("budget");
                let value = dot(&h.normal, x);
                shift_along(x, &h.normal, d, h.rhs - value);
            }
            _ => {
                for v in x.iter_mut() {
                    *v = v.max(T::zero()).min(T::one());
                }
            }
        }
    }

    /// Projection in the metric `Σ dᵢ (eᵢ − vᵢ)²` by Dykstra's scheme. Returns
    /// the point and the number of sweeps used.
    pub fn project_weighted(&self, v: &[T], d: &[T], tol: T, max_sweeps: usize) -> Result<(Vec<T>, usize)> {
        if v.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: v.len() });
        }
        if self.gain.is_none() {
            let x = self.project_direct(v, d);
            let viol = self.violation(&x);
            if viol > T::lit(1e-8).max(tol) {
                return Err(Error::Infeasible(format!("budget cannot be met (violation {:e})", viol.as_f64())));
            }
            return Ok((x, 0));
        }
        self.dykstra(v, d, tol, max_sweeps)
    }

    fn dykstra(&self, v: &[T], d: &[T], tol: T, max_sweeps: usize) -> Result<(Vec<T>, usize)> {
        let m = self.set_count();
        let mut x = v.to_vec();
        let mut scratch = Vec::with_capacity(self.n);
        let mut incr = vec![vec![T::zero(); self.n]; m];
        let mut before = x.clone();
        let mut y = vec![T::zero(); self.n];
        let mut sweeps = 0;
        let mut settled = false;
        while sweeps < max_sweeps {
            sweeps += 1;
            before.copy_from_slice(&x);
            for (k, p) in incr.iter_mut().enumerate() {
                for i in 0..self.n {
                    y[i] = x[i] + p[i];
                }
                x.copy_from_slice(&y);
                self.apply(k, &mut x, d, &mut scratch);
                for i in 0..self.n {
                    p[i] = y[i] - x[i];
                }
            }
            if max_abs_diff(&x, &before) < tol {
                settled = true;
                break;
            }
        }
        let feas_tol = T::lit(1e-8).max(tol);
        let viol = self.violation(&x);
        if viol > feas_tol {
            return Err(Error::Infeasible(format!(
                "alternating projections ended {} the feasible set (violation {:e} after {sweeps} sweeps)",
                if settled { "outside" } else { "without reaching" },
                viol.as_f64()
            )));
        }
        Ok((x, sweeps))
    }

    /// `clip(PAVA_D(v + λ D⁻¹p))`, the projection onto box ∩ monotone cone of
    /// the point shifted along the budget normal.
    fn shifted_box_monotone(&self, v: &[T], d: &[T], lambda: T, out: &mut [T], scratch: &mut Vec<T>, w: &mut Vec<T>) {
        match &self.budget {
            Some(h) => {
                for i in 0..self.n {
                    out[i] = v[i] + lambda * h.normal[i] / d[i];
                }
            }
            None => out.copy_from_slice(v),
        }
        if let Some(order) = &self.order {
            scratch.clear();
            scratch.extend(order.iter().map(|&i| out[i]));
            w.clear();
            w.extend(order.iter().map(|&i| d[i]));
            pava(scratch, w);
            for (&i, &val) in order.iter().zip(scratch.iter()) {
                out[i] = val;
            }
        }
        for val in out.iter_mut() {
            *val = val.max(T::zero()).min(T::one());
        }
    }

    /// Exact projection when no gain constraint is present. Bounded isotonic
    /// regression is the clipped isotonic fit, and the budget multiplier is
    /// found by bracketing the monotone piecewise-linear map `λ ↦ pᵀe(λ)`.
    fn project_direct(&self, v: &[T], d: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n];
        let mut scratch = Vec::with_capacity(self.n);
        let mut w = Vec::with_capacity(self.n);
        let Some(h) = &self.budget else {
            self.shifted_box_monotone(v, d, T::zero(), &mut out, &mut scratch, &mut w);
            return out;
        };
        let mut lo = T::zero();
        let mut hi = T::zero();
        for i in 0..self.n {
            if h.normal[i] > T::zero() {
                let r = d[i] / h.normal[i];
                lo = lo.min(-v[i] * r);
                hi = hi.max((T::one() - v[i]) * r);
            }
        }
        lo = lo - T::one();
        hi = hi + T::one();
        let mut eval = |lambda: T, out: &mut [T]| {
            self.shifted_box_monotone(v, d, lambda, out, &mut scratch, &mut w);
            dot(&h.normal, out) - h.rhs
        };
        let mut f_lo = eval(lo, &mut out);
        let mut f_hi = eval(hi, &mut out);
        let scale = h.normal.iter().copied().fold(T::zero(), |a, b| a + b.abs()).max(T::one());
        let tol = T::epsilon() * T::lit(64.0) * scale;
        if f_lo >= T::zero() {
            eval(lo, &mut out);
            return out;
        }
        if f_hi <= T::zero() {
            eval(hi, &mut out);
            return out;
        }
        for it in 0..400 {
            // alternate secant and bisection steps; the secant step is exact
            // once the bracket sits on one linear piece
            let mid = if it % 2 == 0 {
                lo + (hi - lo) * (-f_lo) / (f_hi - f_lo)
            } else {
                lo + (hi - lo) * T::lit(0.5)
            };
            if !(mid > lo && mid < hi) {
                break;
            }
            let f = eval(mid, &mut out);
            if f.abs() <= tol {
                return out;
            }
            if f < T::zero() {
                lo = mid;
                f_lo = f;
            } else {
                hi = mid;
                f_hi = f;
            }
        }
        let pick = if -f_lo <= f_hi { lo } else { hi };
        eval(pick, &mut out);
        out
    }

    /// Euclidean projection.
    pub fn project(&self, v: &[T], tol: T) -> Result<Vec<T>> {
        let ones = vec![T::one(); self.n];
        Ok(self.project_weighted(v, &ones, tol, DEFAULT_MAX_SWEEPS)?.0)
    }
}

/// Moves `x` along `D⁻¹a` so that `aᵀx` grows by `gap`.
fn shift_along<T: Real>(x: &mut [T], a: &[T], d: &[T], gap: T) {
    let denom: T = a.iter().zip(d).map(|(&ai, &di)| ai * ai / di).sum();
    if denom <= T::zero() {
        return;
    }
    let t = gap / denom;
    for ((xi, &ai), &di) in x.iter_mut().zip(a).zip(d) {
        *xi = *xi + t * ai / di;
    }
}

/// Euclidean projection of `v` onto the feasible set of `cons`, iterating
/// until successive Dykstra sweeps differ by less than `tol`.
pub fn project<T: Real>(v: &[T], cons: &ConstraintSet<T>, probs: &ComplianceProbabilities<T>, tol: T) -> Result<Vec<T>> {
    Polytope::new(cons, probs)?.project(v, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn probs(n: usize) -> ComplianceProbabilities<f64> {
        ComplianceProbabilities::from_at_c(vec![0.0; n], vec![1.0; n]).unwrap()
    }

    #[test]
    fn box_clip() {
        let out = project(&[1.5, -0.5], &ConstraintSet::unconstrained(), &probs(2), 1e-12).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn pava_two_points() {
        let cons = ConstraintSet::unconstrained().with_score(vec![0.0, 1.0]).monotone();
        let out = project(&[0.9, 0.1], &cons, &probs(2), 1e-12).unwrap();
        assert_relative_eq!(out[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(out[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn weighted_pava_pools_by_weight() {
        let mut v = vec![3.0, 1.0, 2.0];
        pava(&mut v, &[1.0, 3.0, 1.0]);
        assert_relative_eq!(v[0], 1.5);
        assert_relative_eq!(v[1], 1.5);
        assert_relative_eq!(v[2], 2.0);
    }

    #[test]
    fn budget_hyperplane_projection() {
        let cons = ConstraintSet::unconstrained().with_budget(0.5);
        let out = project(&[0.2, 0.4, 0.6, 0.2], &cons, &probs(4), 1e-13).unwrap();
        for (o, e) in out.iter().zip([0.35, 0.55, 0.75, 0.35]) {
            assert_relative_eq!(*o, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn budget_out_of_range_is_infeasible() {
        let p = ComplianceProbabilities::from_at_c(vec![0.2; 3], vec![0.5; 3]).unwrap();
        let cons = ConstraintSet::unconstrained().with_budget(0.1);
        assert!(matches!(project(&[0.5; 3], &cons, &p, 1e-12), Err(Error::Infeasible(_))));
        let cons = ConstraintSet::unconstrained().with_budget(0.8);
        assert!(matches!(project(&[0.5; 3], &cons, &p, 1e-12), Err(Error::Infeasible(_))));
    }

    #[test]
    fn gain_beyond_budget_is_infeasible() {
        let cons = ConstraintSet::unconstrained()
            .with_score(vec![1.0, 2.0, 3.0, 4.0])
            .with_budget(0.25)
            .with_gain(1.0, GainReference::Sum(5.0));
        assert!(matches!(project(&[0.5; 4], &cons, &probs(4), 1e-12), Err(Error::Infeasible(_))));
    }

    #[test]
    fn auto_gain_reference_uses_threshold_design() {
        let cons = ConstraintSet::unconstrained()
            .with_score(vec![1.0, 2.0, 3.0, 4.0])
            .with_budget(0.5)
            .with_gain(1.0, GainReference::Auto);
        // threshold design treats rows 2 and 3, so the only feasible point is that design
        let out = project(&[0.5; 4], &cons, &probs(4), 1e-13).unwrap();
        for (o, e) in out.iter().zip([0.0, 0.0, 1.0, 1.0]) {
            assert!((o - e).abs() < 1e-6, "{out:?}");
        }
    }

    #[test]
    fn gain_without_budget_or_reference_rejected() {
        let p = ComplianceProbabilities::from_at_c(vec![0.0; 2], vec![1.0; 2]).unwrap();
        let cons = ConstraintSet::unconstrained()
            .with_score(vec![1.0, 2.0])
            .with_gain(0.5, GainReference::Auto);
        assert!(matches!(Polytope::new(&cons, &p), Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn direct_path_agrees_with_dykstra() {
        let n = 30;
        let score: Vec<f64> = (0..n).map(|i| ((i * 11) % n) as f64).collect();
        let p_at: Vec<f64> = (0..n).map(|i| 0.02 * (i % 7) as f64).collect();
        let p_c: Vec<f64> = (0..n).map(|i| 0.3 + 0.05 * (i % 5) as f64).collect();
        let p = ComplianceProbabilities::from_at_c(p_at, p_c).unwrap();
        let cons = ConstraintSet::unconstrained().with_score(score).with_budget(0.35).monotone();
        let poly = Polytope::new(&cons, &p).unwrap();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64 / 6.0 - 0.5).collect();
        let d: Vec<f64> = (0..n).map(|i| 0.5 + (i % 4) as f64).collect();
        let (direct, _) = poly.project_weighted(&v, &d, 1e-13, DEFAULT_MAX_SWEEPS).unwrap();
        let (alt, _) = poly.dykstra(&v, &d, 1e-13, 100_000).unwrap();
        assert!(max_abs_diff(&direct, &alt) < 1e-7, "{direct:?}\n{alt:?}");
        assert!(poly.violation(&direct) < 1e-12);
    }

    #[test]
    fn all_constraints_feasible_output() {
        let n = 40;
        let score: Vec<f64> = (0..n).map(|i| ((i * 17) % n) as f64 / n as f64).collect();
        let p_at: Vec<f64> = score.iter().map(|r| 0.05 + 0.2 * r).collect();
        let p_c: Vec<f64> = score.iter().map(|r| 0.7 - 0.3 * r).collect();
        let p = ComplianceProbabilities::from_at_c(p_at, p_c).unwrap();
        let cons = ConstraintSet::unconstrained()
            .with_score(score.clone())
            .with_budget(0.4)
            .monotone()
            .with_gain(0.5, GainReference::Auto);
        let poly = Polytope::new(&cons, &p).unwrap();
        let v: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 / 5.0 - 0.5).collect();
        let out = poly.project(&v, 1e-12).unwrap();
        assert!(poly.violation(&out) <= 1e-8);
        let again = poly.project(&out, 1e-12).unwrap();
        assert!(max_abs_diff(&out, &again) < 1e-8);
    }
}
