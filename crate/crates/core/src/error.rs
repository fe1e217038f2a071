use thiserror::Error;

/// Errors raised by operator construction, quadrature and the key-rate solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: achieved error {achieved:.3e} > tolerance {tolerance:.3e} ({context})")]
    Quadrature {
        achieved: f64,
        tolerance: f64,
        context: String,
    },

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("constraints are infeasible: max residual {max_residual:.3e}")]
    Infeasible { max_residual: f64 },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
