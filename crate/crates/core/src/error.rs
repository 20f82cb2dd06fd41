//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("not a tree: {reason} (branches {branches:?})")]
    NotATree { reason: String, branches: Vec<usize> },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("empty generation: no complete branch group could be decoded")]
    EmptyGeneration,

    #[error("malformed growth sequence: recovered {recovered} of 10 stage frames")]
    MalformedGrowth { recovered: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("empty loss: every target position is masked")]
    EmptyLoss,

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("internal state: {0}")]
    InternalState(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code family used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidParams(_) | Error::InvalidSchedule(_) => 2,
            Error::Io(_) => 3,
            Error::Format(_) => 4,
            Error::DegenerateGeometry(_)
            | Error::NotATree { .. }
            | Error::Capacity(_)
            | Error::EmptyGeneration
            | Error::MalformedGrowth { .. } => 5,
            Error::Shape { .. } | Error::Autodiff(_) | Error::InternalState(_) => 6,
            Error::NonFinite(_) | Error::EmptyLoss => 7,
        }
    }
}
