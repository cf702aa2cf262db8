//! Crate-wide error type.

use crate::frame::CoordinateFrame;

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two geometric objects live in different coordinate frames.
    #[error("coordinate frame mismatch in {context}: expected {expected}, found {found}")]
    FrameMismatch {
        context: &'static str,
        expected: CoordinateFrame,
        found: CoordinateFrame,
    },

    /// A rotation block failed the orthonormality / determinant checks.
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    /// A value failed structural validation. `field` is a dotted path into
    /// the offending structure.
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    /// Input data could not be parsed. `offset` is a byte offset where known.
    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    /// The input is degenerate for the requested operation (collinear points,
    /// coplanar hull input, empty cloud, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Sizes that must agree do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An index referred outside its container.
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// The operation needs more frames than the sequence provides.
    #[error("{context} needs at least {needed} frames, got {got}")]
    NotEnoughFrames {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    /// A non-finite value appeared where finite arithmetic is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The optimizer aborted (divergence or non-finite loss).
    #[error("optimization aborted at stage {stage} iteration {iteration}: {reason}")]
    OptimizationAborted {
        stage: String,
        iteration: usize,
        reason: String,
    },

    /// The scripted motion cannot reach the requested hold layout.
    #[error("unreachable hold layout: {0}")]
    UnreachableLayout(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
