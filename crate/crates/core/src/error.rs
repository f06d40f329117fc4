use thiserror::Error;

/// Errors raised by the solvers and data loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{field} violates its bound at node {node}: value {value} outside [{lo}, {hi}]")]
    BoundViolation {
        field: &'static str,
        node: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("data is not stable (mu_hat = {mu_hat:?}, balanced = {balanced})")]
    Unstable { mu_hat: Option<f64>, balanced: bool },

    #[error("{context}: no convergence after {iterations} iterations (last residual {last:.3e})")]
    NoConvergence {
        context: String,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("operator is not monotone on {bad} of {total} rows; widen the stencil")]
    NonMonotone { bad: usize, total: usize },

    #[error("{0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
