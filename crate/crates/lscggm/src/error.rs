use thiserror::Error;

/// Errors produced by model construction, solvers and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix required to be positive definite failed its Cholesky factorization.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine failed (eigendecomposition, line search underflow, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
