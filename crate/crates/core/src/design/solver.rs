//! Projected descent for the design program.
//!
//! Each step takes the Newton-diagonal direction `Δ = P_D(e − D⁻¹g) − e`,
//! where `D` is the (floored) diagonal of the Hessian and `P_D` the projection
//! onto the feasible set in the `D`-weighted metric, then backtracks from step
//! 1 with the Armijo rule. With `D = I` this is plain projected gradient.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NudgePropensity;
use crate::scalar::{dot, Real};

use super::projection::{ConstraintSet, Polytope, DEFAULT_MAX_SWEEPS};
use super::DesignProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", default, deny_unknown_fields)]
pub struct SolverOptions<T> {
    pub max_iter: usize,
    /// Relative objective decrease counted as stalled.
    pub rel_tol: T,
    /// Consecutive stalled iterations before stopping.
    pub patience: usize,
    pub armijo_c: T,
    pub max_halvings: usize,
    /// L∞ tolerance between successive Dykstra sweeps.
    pub projection_tol: T,
    pub max_sweeps: usize,
    /// KKT residual above which a capped run is flagged as unconverged.
    pub kkt_tol: T,
    /// Induced propensities are clamped to `[floor, 1 − floor]` while iterating.
    pub interior_floor: T,
    /// Use the diagonal Hessian metric; `false` gives unscaled projected gradient.
    pub scaled: bool,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            rel_tol: T::lit(1e-10),
            patience: 5,
            armijo_c: T::lit(1e-4),
            max_halvings: 60,
            projection_tol: T::lit(1e-12).max(T::epsilon() * T::lit(16.0)),
            max_sweeps: DEFAULT_MAX_SWEEPS,
            kkt_tol: T::lit(1e-5),
            interior_floor: T::lit(1e-6),
            scaled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// The iteration cap was hit with a KKT residual above tolerance.
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DesignSolution<T> {
    pub e_z_star: NudgePropensity<T>,
    pub objective: T,
    pub iterations: usize,
    /// `‖e − P(e − ∇V(e))‖∞` with the Euclidean projection.
    pub kkt_residual: T,
    /// Largest constraint violation at `e_z_star`.
    pub projection_residual: T,
    pub status: SolveStatus,
}

impl<T: Real> DesignSolution<T> {
    /// Turns an unconverged solve into [`Error::NoConvergence`].
    pub fn ensure_converged(self) -> Result<Self> {
        match self.status {
            SolveStatus::Converged => Ok(self),
            SolveStatus::NoConvergence => Err(Error::NoConvergence {
                iterations: self.iterations,
                detail: format!("KKT residual {:e}", self.kkt_residual.as_f64()),
            }),
        }
    }

    /// One `e_z` column aligned with the input rows.
    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["e_z"]).map_err(csv_io)?;
        for v in self.e_z_star.as_slice() {
            w.write_record([v.to_string()]).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(f))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

/// Minimizes the variance criterion over the feasible set of `cons`,
/// starting from the projection of `0.5 · 1`.
pub fn solve<T: Real>(prob: &DesignProblem<T>, cons: &ConstraintSet<T>, opts: &SolverOptions<T>) -> Result<DesignSolution<T>> {
    let n = prob.n();
    let poly = Polytope::new(cons, &prob.probs)?;
    let ones = vec![T::one(); n];
    let floor = Some(opts.interior_floor);

    let mut e = poly
        .project_weighted(&vec![T::lit(0.5); n], &ones, opts.projection_tol, opts.max_sweeps)?
        .0;
    let mut ev = prob.evaluate(&e, floor)?;
    let mut f = ev.value;
    if !f.is_finite() {
        return Err(Error::SingularInformation("objective not finite at the starting point".into()));
    }
    let mut g = prob.gradient_at(&ev);

    let mut stalled = 0;
    let mut iterations = 0;
    let mut target = vec![T::zero(); n];
    let mut cand = vec![T::zero(); n];
    while iterations < opts.max_iter {
        iterations += 1;
        let d = if opts.scaled {
            metric(&prob.hessian_diagonal_at(&ev))
        } else {
            ones.clone()
        };
        for i in 0..n {
            target[i] = e[i] - g[i] / d[i];
        }
        let (p, _) = poly.project_weighted(&target, &d, opts.projection_tol, opts.max_sweeps)?;
        let delta: Vec<T> = p.iter().zip(&e).map(|(&a, &b)| a - b).collect();
        let slope = dot(&g, &delta);
        if !(slope < T::zero()) {
            break;
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            for i in 0..n {
                cand[i] = e[i] + step * delta[i];
            }
            if let Ok(next) = prob.evaluate(&cand, floor) {
                if next.value <= f + opts.armijo_c * step * slope {
                    accepted = Some(next);
                    break;
                }
            }
            step = step * T::lit(0.5);
        }
        let Some(next) = accepted else { break };

        let decrease = (f - next.value) / f.abs().max(T::min_positive_value());
        e.copy_from_slice(&cand);
        f = next.value;
        ev = next;
        g = prob.gradient_at(&ev);
        if decrease < opts.rel_tol {
            stalled += 1;
            if stalled >= opts.patience {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let shifted: Vec<T> = e.iter().zip(&g).map(|(&a, &b)| a - b).collect();
    let reference = poly.project_weighted(&shifted, &ones, opts.projection_tol, opts.max_sweeps)?.0;
    let kkt_residual = e
        .iter()
        .zip(&reference)
        .map(|(&a, &b)| (a - b).abs())
        .fold(T::zero(), T::max);
    let projection_residual = poly.violation(&e);
    let clipped: Vec<T> = e.iter().map(|v| v.max(T::zero()).min(T::one())).collect();
    let objective = match prob.evaluate(&clipped, None) {
        Ok(raw) => raw.value,
        Err(_) => f,
    };
    let status = if iterations >= opts.max_iter && kkt_residual > opts.kkt_tol {
        SolveStatus::NoConvergence
    } else {
        SolveStatus::Converged
    };
    Ok(DesignSolution {
        e_z_star: NudgePropensity::new(clipped)?,
        objective,
        iterations,
        kkt_residual,
        projection_residual,
        status,
    })
}

/// Floors the Hessian diagonal so the metric stays positive definite.
fn metric<T: Real>(h: &[T]) -> Vec<T> {
    let top = h.iter().copied().fold(T::zero(), T::max);
    if !(top > T::zero()) || !top.is_finite() {
        return vec![T::one(); h.len()];
    }
    let low = top * T::lit(1e-10);
    h.iter().map(|&v| if v > low { v } else { low }).collect()
}
