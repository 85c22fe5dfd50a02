use thiserror::Error;

use crate::volume_io::VolumeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("invalid mass assignment: {0}")]
    InvalidMass(String),
    #[error("class count mismatch: {0} vs {1}")]
    ClassMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("surface distance undefined: {0} mask is empty")]
    EmptyMask(&'static str),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
