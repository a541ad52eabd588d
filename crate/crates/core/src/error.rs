use thiserror::Error;

/// Errors produced by the optimization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("matrix is singular: smallest eigenvalue {min_eig:e} is below floor {floor:e}")]
    Singular { min_eig: f64, floor: f64 },

    #[error("non-finite score {value} at step {k}, sample {j}")]
    InvalidScore { k: usize, j: usize, value: f64 },

    #[error("step size too large: kappa * beta = {product} >= 1; use a smaller alpha")]
    StepSize { product: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint failed: {0}")]
    Checkpoint(String),

    #[error("snapshot parse error at line {line}: {msg}")]
    Snapshot { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
