use std::io;

use thiserror::Error;

/// Errors raised by the simulation and fitting routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("neuron {index}: (a, b) is too close to zero, direction is undefined")]
    DegenerateNeuron { index: usize },

    #[error("neuron {index}: cannot recover full parameters from (r, theta, delta)")]
    UnrecoverableNeuron { index: usize },

    #[error("non-finite parameter encountered at step {step}")]
    NonFiniteState { step: usize },

    #[error("angle lies on a region boundary (left limit {left:?}, right limit {right:?})")]
    BoundaryPoint { left: (f64, f64), right: (f64, f64) },

    #[error("angle {theta} is not on the boundary line of sample {sample}")]
    NotABoundary { theta: f64, sample: usize },

    #[error("Gram matrix is singular (smallest eigenvalue {min_eigenvalue:e}); raise the jitter")]
    SingularGram { min_eigenvalue: f64 },

    #[error("adaptive quadrature did not converge (error bound {error_bound:e})")]
    QuadratureNotConverged { error_bound: f64 },

    #[error("need at least 2 samples, got {got}")]
    TooFewSamples { got: usize },

    #[error("target delta unreachable for {} neuron(s)", .failures.len())]
    UnreachableDelta { failures: Vec<DeltaFailure> },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A neuron whose invariant could not be moved to the requested value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaFailure {
    pub index: usize,
    pub achieved: f64,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
