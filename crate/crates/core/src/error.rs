use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid permutation in layer {layer}: {reason}")]
    InvalidPermutation { layer: usize, reason: String },
    #[error("NaN encountered at index {0}")]
    NanValue(usize),
    #[error("k_percent must be in (0, 100], got {0}")]
    InvalidKPercent(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("decode error: {0}")]
    Decode(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
