use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("unsatisfiable constraints for video {video}: {detail}")]
    Infeasible { video: String, detail: String },

    #[error("supervision level {level} needs `{field}` for instance {instance}")]
    MissingAnnotation {
        level: String,
        instance: String,
        field: &'static str,
    },

    #[error("empty bag for video {video}, instance {instance}")]
    EmptyBag { video: String, instance: String },

    #[error("instance too large for exhaustive search: {0} assignments")]
    TooLarge(u128),

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("{0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
