use thiserror::Error;

use crate::sim::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layer shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected layer dims {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("value count {found} does not match shape dimension {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("compression input is empty")]
    EmptyInput,

    #[error("layer override index {index} out of range for {layers} layers")]
    InvalidOverride { index: usize, layers: usize },

    #[error("layer overrides are only valid in layer-wise mode")]
    OverrideInEntireMode,

    #[error("inflation constant is not known for {0}")]
    UnknownOmega(String),

    #[error("exhaustive enumeration over dimension {dim} exceeds the limit of {limit}")]
    EnumerationTooLarge { dim: usize, limit: usize },

    #[error("worker {worker} has an empty data partition")]
    EmptyPartition { worker: usize },

    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize, partial: Box<Trajectory> },

    #[error("dataset error: {0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
