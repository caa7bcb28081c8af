use thiserror::Error;

use crate::stability::Rejection;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported system class: {0}")]
    Unsupported(String),

    #[error("controller rejected: {0}")]
    Rejected(Rejection),

    #[error("feedback contract violated: perturbation {delta:.3e} exceeds epsilon {epsilon:.3e}")]
    Contract { delta: f64, epsilon: f64 },

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("degenerate horizon T={0}; need T >= 3")]
    DegenerateHorizon(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}
