//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A serialized container failed a structural check. `field` names the
    /// offending manifest field or blob section.
    #[error("format error in `{field}`: {reason}")]
    Format { field: String, reason: String },

    /// A tensor or payload had the wrong dimensions.
    #[error("shape error in `{field}`: expected {expected}, got {actual}")]
    Shape {
        field: String,
        expected: String,
        actual: String,
    },

    /// Cosine similarity of a zero-length vector is undefined.
    #[error("zero-norm vector in cosine similarity ({context})")]
    ZeroNorm { context: String },

    /// Training aborted on a non-finite loss or gradient.
    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    /// An operation required more sessions/windows than the dataset has.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Two artifacts that must share a frontend mode do not.
    #[error("frontend mode mismatch: {0} vs {1}")]
    ModeMismatch(String, String),

    /// Peak frequency of an all-zero kernel is undefined.
    #[error("undefined spectral peak: kernel is all zeros")]
    UndefinedPeak,

    /// Evaluation over an empty partition.
    #[error("empty partition: {0}")]
    EmptyPartition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(
        field: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        Error::Shape {
            field: field.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
