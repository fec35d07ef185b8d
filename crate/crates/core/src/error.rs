use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular Hessian in logistic fit (increase the ridge penalty)")]
    SingularHessian,
    #[error("no convergence after {iterations} iterations: {detail}")]
    NoConvergence { iterations: usize, detail: String },
    #[error("empty arm: no pilot rows with Z = {0}")]
    EmptyArm(u8),
    #[error("singular information matrix: {0}")]
    SingularInformation(String),
    #[error("infeasible constraint set: {0}")]
    Infeasible(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("nonpositive variance at row {0}")]
    NonpositiveVariance(usize),
    #[error("variance ratio {ratio} at row {row} outside [1/2, 2]")]
    RatioOutOfRange { row: usize, ratio: f64 },
    #[error("empty cell (Z = {z}, W = {w}) in outcome data")]
    EmptyCell { z: u8, w: u8 },
    #[error("fold too small: {n} rows cannot fill {k} folds of at least 2 rows")]
    FoldTooSmall { n: usize, k: usize },
    #[error("invalid compliance curve: {0}")]
    InvalidCurve(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bootstrap replicate {replicate} stayed degenerate after {redraws} redraws")]
    ResampleDegenerate { replicate: usize, redraws: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Bad input or configuration, as opposed to a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedCsv { .. }
                | Error::SchemaViolation(_)
                | Error::DomainViolation(_)
                | Error::LengthMismatch { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonpositiveVariance(_)
                | Error::RatioOutOfRange { .. }
                | Error::InvalidCurve(_)
                | Error::InvalidConfig(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
