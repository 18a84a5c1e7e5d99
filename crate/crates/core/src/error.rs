use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("softmax row {row} is fully masked")]
    MaskedRow { row: usize },

    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("index {index} out of range for {what} of size {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid lexicon entry {entry:?}: {reason}")]
    LexiconEntry { entry: String, reason: &'static str },

    #[error("altlex span of {len} tokens does not fit max_len {max_len}")]
    AltLexTooLong { len: usize, max_len: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("example {index} has no label")]
    MissingLabel { index: usize },

    #[error("{0} is undefined: both classes must be present")]
    UndefinedMetric(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms:?}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: Vec<(String, f64)>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
