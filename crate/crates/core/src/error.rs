use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The simulated state left the finite region (or exceeded the divergence guard).
    #[error("integration diverged at t = {time:.4} s (last finite state norm {norm:.3e})")]
    Diverged { time: f64, norm: f64 },

    #[error("least-squares data matrix is ill-conditioned (condition {condition:.3e}) at iteration {iteration}; add excitation or data")]
    IllConditioned { condition: f64, iteration: usize },

    #[error("policy iteration did not converge after {iterations} iterations (last relative change {last_delta:.3e})")]
    NotConverged { iterations: usize, last_delta: f64 },

    #[error("learned certificate is not positive definite on the linear block at iteration {iteration} (min eigenvalue {min_eigenvalue:.3e})")]
    NotStabilizing { iteration: usize, min_eigenvalue: f64 },

    #[error("structured synthesis infeasible: {0}")]
    StructuredInfeasible(String),

    #[error("sparse synthesis infeasible at gamma = {gamma}: {reason}")]
    SparseInfeasible { gamma: f64, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("linear part is not stabilizable: {0}")]
    Unstabilizable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
