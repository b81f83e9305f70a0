use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to be actionable
/// from the CLI without backtraces.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("problem definition error: {0}")]
    Problem(String),

    #[error("scalar function self-check failed: {0}")]
    ScalarFn(String),

    #[error("path error: {0}")]
    Path(String),

    #[error("solver error: {0}")]
    Solve(String),

    #[error("out of regime: {0}")]
    Regime(String),

    #[error("decay fit error: {0}")]
    Decay(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
