use thiserror::Error;

/// Errors raised by the simulator, the estimators, the solver and the runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-identifiable data: {0}")]
    NonIdentifiable(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("infeasible candidate: {}", .violations.join("; "))]
    Infeasible { violations: Vec<String> },

    #[error("return function {index} is not concave (curvature {curvature:e} at b = {at:e})")]
    NonConcave { index: usize, at: f64, curvature: f64 },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
