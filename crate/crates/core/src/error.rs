use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("LP solver failure: {0}")]
    Solver(String),

    #[error("data rank condition violated: {0}")]
    Rank(String),

    #[error("set is empty: {0}")]
    EmptySet(String),

    #[error("set is unbounded: {0}")]
    Unbounded(String),

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}
