use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: cannot reduce over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("axis {axis} is out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("token id {id} is outside the vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("sentence of {len} tokens exceeds max_sentence_len {max}; re-segment the document")]
    SentenceTooLong { len: usize, max: usize },

    #[error("attention weights are degenerate: every token score is zero")]
    DegenerateAttention,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("document {doc_id}: {message}")]
    Validation { doc_id: String, message: String },

    #[error("non-finite loss at epoch {epoch}, document {doc_id}: {terms}")]
    NonFiniteLoss {
        epoch: usize,
        doc_id: String,
        terms: String,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
