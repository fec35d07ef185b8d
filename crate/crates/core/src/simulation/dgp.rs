//! Semi-synthetic data-generating process for encouragement studies.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ComplianceProbabilities, EncouragementDataset, NudgePropensity, INTERCEPT_NAME};

/// Effect coefficients in column order: intercept, four standardized
/// clinical covariates, pulse, risk score.
pub const DEFAULT_GAMMA: [f64; 7] = [-6.35, -32.31, -10.65, 11.19, -2.59, 62.03, -3.40];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveParams {
    pub a: f64,
    pub b: f64,
    pub floor: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        Self { a: 0.8, b: 5.0, floor: 0.05 }
    }
}

impl CurveParams {
    /// `(p_AT, p_NT)` at score `r`.
    pub fn at_nt(&self, r: f64) -> (f64, f64) {
        let at = self.a * (-self.b * (1.0 - r)).exp() + self.floor;
        let nt = self.a * (-self.b * r).exp() + self.floor;
        (at, nt)
    }

    /// Complier share is concave in `r`, so checking both endpoints suffices.
    pub fn validate(&self) -> Result<()> {
        if ![self.a, self.b, self.floor].iter().all(|v| v.is_finite()) || self.a < 0.0 || self.floor < 0.0 {
            return Err(Error::InvalidCurve(format!("parameters {self:?}")));
        }
        for r in [0.0, 1.0] {
            let (at, nt) = self.at_nt(r);
            if 1.0 - at - nt <= 0.0 {
                return Err(Error::InvalidCurve(format!("complier share {} at score {r}", 1.0 - at - nt)));
            }
        }
        Ok(())
    }
}

/// Baseline outcome `f(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Baseline {
    /// `intercept + coef·X`
    Affine { intercept: f64, coef: Vec<f64> },
    /// `sin_amp·sin(πr) + square·x₂² + linear·x₃`
    SmoothNonlinear { sin_amp: f64, square: f64, linear: f64 },
    Zero,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::SmoothNonlinear {
            sin_amp: 5.0,
            square: 2.0,
            linear: -3.0,
        }
    }
}

impl Baseline {
    pub fn eval(&self, row: &[f64], score_col: usize) -> f64 {
        match self {
            Baseline::Affine { intercept, coef } => intercept + row.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>(),
            Baseline::SmoothNonlinear { sin_amp, square, linear } => {
                let r = row[score_col];
                let x2 = if score_col > 2 { row[2] } else { 0.0 };
                let x3 = if score_col > 3 { row[3] } else { 0.0 };
                sin_amp * (std::f64::consts::PI * r).sin() + square * x2 * x2 + linear * x3
            }
            Baseline::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    /// Covariate columns including the intercept (first) and score (last).
    pub d: usize,
    pub gamma_true: Vec<f64>,
    pub baseline: Baseline,
    pub compliance_curves: CurveParams,
    /// Variance of the additive normal noise.
    pub noise_var: f64,
    /// Always-takers get `+shift`, never-takers `−shift`.
    pub class_shift: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: DEFAULT_GAMMA.len(),
            gamma_true: DEFAULT_GAMMA.to_vec(),
            baseline: Baseline::default(),
            compliance_curves: CurveParams::default(),
            noise_var: 20.0,
            class_shift: 10.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn score_col(&self) -> usize {
        self.d - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidConfig(format!("d = {} but intercept and score need d >= 2", self.d)));
        }
        if self.gamma_true.len() != self.d {
            return Err(Error::InvalidConfig(format!(
                "gamma_true has {} entries for d = {}",
                self.gamma_true.len(),
                self.d
            )));
        }
        if !(self.noise_var >= 0.0) || !self.noise_var.is_finite() {
            return Err(Error::InvalidConfig(format!("noise_var {} must be finite and >= 0", self.noise_var)));
        }
        if let Baseline::Affine { coef, .. } = &self.baseline {
            if coef.len() != self.d {
                return Err(Error::InvalidConfig(format!("affine baseline has {} coefficients for d = {}", coef.len(), self.d)));
            }
        }
        self.compliance_curves.validate()
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.d)
            .map(|j| match j {
                0 => INTERCEPT_NAME.to_string(),
                j if j == self.d - 1 => "score".to_string(),
                j => format!("x{j}"),
            })
            .collect()
    }
}

/// `n × d` covariates: intercept, standardized normals, then a shuffled
/// evenly spaced score `i/(n + 1)`.
pub fn generate_covariates<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Result<Matrix<f64>> {
    covariates(config.n, config.d, rng)
}

pub(crate) fn covariates<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Matrix<f64>> {
    if d < 2 {
        return Err(Error::InvalidConfig(format!("d = {d} but intercept and score need d >= 2")));
    }
    let mut cols = vec![vec![1.0; n]];
    for _ in 1..d - 1 {
        let mut c: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nf = n as f64;
        let m = c.iter().sum::<f64>() / nf;
        let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf).sqrt();
        for v in &mut c {
            *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 };
        }
        cols.push(c);
    }
    let mut score: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
    score.shuffle(rng);
    cols.push(score);
    if n == 0 {
        return Ok(Matrix::zeros(0, d));
    }
    Matrix::from_columns(&cols)
}

/// Class probabilities from the score: never-takers dominate at low scores,
/// always-takers at high scores, compliers in between.
pub fn compliance_curves(score: &[f64], params: &CurveParams) -> Result<ComplianceProbabilities<f64>> {
    let n = score.len();
    let (mut p_at, mut p_nt, mut p_c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &r in score {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::DomainViolation(format!("score {r} outside [0, 1]")));
        }
        let (at, nt) = params.at_nt(r);
        let c = 1.0 - at - nt;
        if c <= 0.0 {
            return Err(Error::InvalidCurve(format!("complier share {c} at score {r}")));
        }
        p_at.push(at);
        p_nt.push(nt);
        p_c.push(c);
    }
    ComplianceProbabilities::new(p_at, p_nt, p_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceClass {
    NeverTaker,
    Complier,
    AlwaysTaker,
}

/// Draws `(Z, class, W, Y)` for the rows of `x`. Each row consumes a fixed
/// number of uniforms, so rows line up across designs under a shared seed.
pub fn generate_study<R: Rng + ?Sized>(
    config: &DgpConfig,
    x: &Matrix<f64>,
    e_z: &NudgePropensity<f64>,
    rng: &mut R,
) -> Result<(EncouragementDataset<f64>, Vec<ComplianceClass>)> {
    config.validate()?;
    let n = x.nrows();
    if x.ncols() != config.d {
        return Err(Error::DimensionMismatch { expected: config.d, got: x.ncols() });
    }
    if e_z.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: e_z.len() });
    }
    let sc = config.score_col();
    let probs = compliance_curves(&x.column(sc), &config.compliance_curves)?;
    let sd = config.noise_var.sqrt();
    let (mut z, mut w, mut y, mut classes) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let row = x.row(i);
        let zi = rng.gen::<f64>() < e_z.as_slice()[i];
        let u = rng.gen::<f64>();
        let class = if u < probs.p_nt()[i] {
            ComplianceClass::NeverTaker
        } else if u < probs.p_nt()[i] + probs.p_c()[i] {
            ComplianceClass::Complier
        } else {
            ComplianceClass::AlwaysTaker
        };
        let wi = class == ComplianceClass::AlwaysTaker || (zi && class == ComplianceClass::Complier);
        let eps: f64 = StandardNormal.sample(rng);
        let shift = match class {
            ComplianceClass::AlwaysTaker => config.class_shift,
            ComplianceClass::NeverTaker => -config.class_shift,
            ComplianceClass::Complier => 0.0,
        };
        let effect: f64 = row.iter().zip(&config.gamma_true).map(|(a, b)| a * b).sum();
        y.push(config.baseline.eval(row, sc) + if wi { effect } else { 0.0 } + shift + sd * eps);
        z.push(zi);
        w.push(wi);
        classes.push(class);
    }
    let data = EncouragementDataset::new(x.clone(), z, w, Some(y), sc, config.column_names())?;
    Ok((data, classes))
}

/// Fresh covariates of `config.n` rows followed by [`generate_study`].
pub fn generate_dataset<R: Rng + ?Sized>(
    config: &DgpConfig,
    e_z: &NudgePropensity<f64>,
    rng: &mut R,
) -> Result<EncouragementDataset<f64>> {
    config.validate()?;
    if e_z.len() != config.n {
        return Err(Error::LengthMismatch { expected: config.n, got: e_z.len() });
    }
    let x = generate_covariates(config, rng)?;
    Ok(generate_study(config, &x, e_z, rng)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateOracle {
    pub value: f64,
    pub std_error: f64,
}

pub const DEFAULT_ORACLE_SIZE: usize = 1_000_000;

/// `E[X | complier]ᵀγ` by complier-weighted averaging over a fresh draw of
/// `n_oracle` covariate rows, with a delta-method standard error.
pub fn true_late(config: &DgpConfig, n_oracle: usize, seed: u64) -> Result<LateOracle> {
    use rand::SeedableRng;
    config.validate()?;
    if n_oracle == 0 {
        return Err(Error::InvalidConfig("n_oracle must be positive".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = covariates(n_oracle, config.d, &mut rng)?;
    let probs = compliance_curves(&x.column(config.score_col()), &config.compliance_curves)?;
    let effects = x.matvec(&config.gamma_true);
    let total: f64 = probs.p_c().iter().sum();
    let value = probs.p_c().iter().zip(&effects).map(|(w, e)| w * e).sum::<f64>() / total;
    let spread: f64 = probs.p_c().iter().zip(&effects).map(|(w, e)| w * w * (e - value) * (e - value)).sum();
    Ok(LateOracle {
        value,
        std_error: spread.sqrt() / total,
    })
}
