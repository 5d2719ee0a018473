//! Error type shared across the numeric core.

use thiserror::Error;

pub type Result<V> = std::result::Result<V, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation produced a NaN or infinity. Non-finite values are hard
    /// errors at op boundaries so numerical failures stay localized.
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },

    /// Two vars from different tapes were combined.
    #[error("{op}: operands belong to different tapes")]
    TapeMismatch { op: &'static str },

    /// A precondition on an argument failed (out-of-range index, empty
    /// codebook, all-masked slot set, ...).
    #[error("{context}: {detail}")]
    InvalidArgument {
        context: &'static str,
        detail: String,
    },
}

impl CoreError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn invalid(context: &'static str, detail: impl Into<String>) -> Self {
        CoreError::InvalidArgument {
            context,
            detail: detail.into(),
        }
    }
}
