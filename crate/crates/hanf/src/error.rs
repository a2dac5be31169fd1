//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HanfError>;

#[derive(Debug, Error)]
pub enum HanfError {
    /// An operation received tensors whose shapes do not fit together.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    /// A caller-supplied value is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// `backward` was asked to differentiate a non-scalar value.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// IDX file parsing failed; `offset` is the byte position of the problem.
    #[error("idx parse error at byte {offset} of {path}: {message}")]
    Idx {
        path: String,
        offset: u64,
        message: String,
    },

    /// Experiment configuration failed validation; `field` names the culprit.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A client round produced a non-finite loss.
    #[error("non-finite loss in client round: {0}")]
    NonFiniteLoss(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HanfError {
    pub fn shape(op: impl Into<String>, detail: impl Into<String>) -> Self {
        HanfError::ShapeMismatch {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HanfError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
