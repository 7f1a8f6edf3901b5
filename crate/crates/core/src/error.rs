use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index}, tolerance {tolerance:.3e})")]
    NotPositiveDefinite { index: usize, pivot: f64, tolerance: f64 },

    #[error("removal leaves a singular matrix (quadratic form {quad:.6})")]
    RemovalSingular { quad: f64 },

    #[error("normalizer bracket does not straddle unit trace (trace at ends {low:.6e}, {high:.6e})")]
    BracketFailure { low: f64, high: f64 },

    #[error("loss denominator is not positive ({denominator:.6e})")]
    DenominatorNonPositive { denominator: f64 },

    #[error("step precondition violated at t = {t}: {detail}")]
    PreconditionViolated { t: usize, detail: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("no full-rank initial subset of size {b} exists")]
    DegenerateInit { b: usize },

    #[error("target search exhausted at lambda* = {lambda_star:.6e}")]
    Exhausted { lambda_star: f64 },

    #[error("instance too large for enumeration: n = {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("sampling mass {total:.12} exceeds one for the {site} distribution")]
    MassOverflow { site: &'static str, total: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("parse error at line {line}, field {field}: {message}")]
    Parse { line: usize, field: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
