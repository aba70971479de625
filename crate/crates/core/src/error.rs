use thiserror::Error;

use crate::trace::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite oracle output")]
    NonFiniteOracle,

    #[error("non-finite input sample at index {0}")]
    NonFiniteSample(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("diverged gradient")]
    DivergedGradient,

    #[error("diverged at iteration {}", .0.iteration)]
    Diverged(Box<Divergence>),

    #[error("ball prox failure after {0} bisection steps")]
    BallProxFailure(usize),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Partial run returned with a divergence error.
#[derive(Debug)]
pub struct Divergence {
    pub iteration: usize,
    pub trace: RunTrace,
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn diverged(iteration: usize, trace: RunTrace) -> Self {
        Error::Diverged(Box::new(Divergence { iteration, trace }))
    }
}
