use thiserror::Error;

/// Errors raised by the chaos library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("slot count {0} exceeds the limit of 32")]
    SlotLimit(usize),

    #[error("coordinate {coord} outside [1, {bound}]")]
    CoordinateOutOfRange { coord: u32, bound: usize },

    #[error("diagonal index tuple {0:?}")]
    Diagonal(Vec<u32>),

    #[error("entry violates the tetrahedral layout: {0}")]
    NotTetrahedral(String),

    #[error("guard exceeded: {what} = {value} > {limit}")]
    Guard {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("assignment is not supported exactly on the multi-index: {0}")]
    DomainMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("empty input")]
    Empty,

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("multiplier is not of product form: {0}")]
    NotFactorized(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    /// True when the error is a resource guard trip rather than bad input.
    pub fn is_guard(&self) -> bool {
        matches!(self, Error::Guard { .. } | Error::SlotLimit(_))
    }
}

pub type Result<T> = core::result::Result<T, Error>;
