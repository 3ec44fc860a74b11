//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by solvers, closed forms and the simulation layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Rejected model parameters (non-positive drift, volatility or discount rate).
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    /// Rejected bound function (monotonicity, concavity or sign violations).
    #[error("invalid bound function: {0}")]
    InvalidBound(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A root bracket guaranteed by theory failed numerically; names the endpoint.
    #[error("bracket failure in {op}: {msg}")]
    Bracket { op: &'static str, msg: String },

    /// Iterative refinement did not reach the requested tolerance.
    #[error("no convergence after {rounds} refinement rounds (residual history: {history:?})")]
    NonConvergence { rounds: usize, history: Vec<f64> },

    /// A solved quantity violates a property it must have (monotonicity, slope range, sign).
    #[error("internal consistency violation: {0}")]
    Inconsistent(String),

    /// A denominator or pivot too small to trust.
    #[error("ill-conditioned computation in {op}: {msg}")]
    IllConditioned { op: &'static str, msg: String },

    /// Invalid run configuration (CLI / config file level).
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
