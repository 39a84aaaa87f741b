use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Geometric precondition violated (non-orthonormal axes, degenerate rotation).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Invalid configuration detected before any work starts.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset / checkpoint / file problems.
    #[error("data error: {0}")]
    Data(String),

    /// API misuse (shape mismatch, wrong call order).
    #[error("usage error: {0}")]
    Usage(String),

    /// Forward/backward contract violated (stale or missing cached state).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values encountered during optimization.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
