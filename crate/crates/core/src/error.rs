//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate row {0}: norm below the eps floor")]
    DegenerateRow(usize),
    #[error("row {0} is not on the unit sphere")]
    NotOnSphere(usize),
    #[error("map returned a non-finite value")]
    NonFiniteMap,
    #[error("power iteration did not converge; last estimate {last}")]
    NoConvergence { last: f64 },
    #[error("eigenvalue solver failed")]
    EigFailure,
    #[error("energy overflow; log-sum-exp surrogate {lse}")]
    EnergyOverflow { lse: f64 },
    #[error("2H = {two_h} must divide D = {d}")]
    Divisibility { two_h: usize, d: usize },
    #[error("operation requires a single head, got H = {0}")]
    HeadCount(usize),
    #[error("tangent basis collapsed in direction {direction} at step {step}")]
    TangentCollapse { direction: usize, step: usize },
    #[error("trajectory diverged at step {0}")]
    DivergedAt(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("archive error: {0}")]
    Archive(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
