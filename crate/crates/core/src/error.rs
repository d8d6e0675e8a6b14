//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("particle index {index} out of range for {count} particles")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("pair ({i}, {j}) invalid: indices must satisfy i < j")]
    InvalidPair { i: usize, j: usize },

    #[error("particles {i} and {j} have coincident centers; contact direction undefined")]
    CoincidentCenters { i: usize, j: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid rate model: {0}")]
    InvalidRates(String),

    #[error("age grid tail not certified after {cap} cells; off-rate lower bound {lower} too small")]
    TailNotCertified { cap: usize, lower: f64 },

    #[error("quadrature did not reach tolerance {tol} (best error estimate {estimate})")]
    QuadratureFailure { tol: f64, estimate: f64 },

    #[error(
        "reference configuration infeasible: pair ({i}, {j}) has signed distance {distance:.3e}"
    )]
    InfeasibleReference { i: usize, j: usize, distance: f64 },

    #[error("line search failed after {halvings} halvings (gradient norm {grad_norm:.3e})")]
    LineSearchFailure { halvings: usize, grad_norm: f64 },

    #[error("solver did not converge within {iterations} iterations: {context}")]
    SolverFailure { iterations: usize, context: String },

    #[error("time {t} outside trajectory range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },

    #[error("{0}")]
    InvalidInput(String),
}
