use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Domain(String),

    #[error("index {index} out of range 1..={len}")]
    OutOfRange { index: usize, len: usize },

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("evaluation produced a non-finite value: {0}")]
    NonFinite(String),

    #[error("water-filling did not converge after {iterations} iterations (rate residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("enumeration would visit {paths} channel paths (cap {cap})")]
    TooManyPaths { paths: f64, cap: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("stale tables: {0}")]
    StaleTables(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
