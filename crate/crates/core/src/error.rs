use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed record in an input file. `line` is 1-based.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty document: {0}")]
    EmptyDocument(String),

    #[error("invalid sentence {doc_id}#{index}: {message}")]
    InvalidSentence {
        doc_id: String,
        index: usize,
        message: String,
    },

    #[error("invalid extraction: {0}")]
    InvalidExtraction(String),

    #[error("no documents")]
    NoDocuments,

    #[error("no gold tuples")]
    NoGold,

    #[error("unknown sentence {doc_id}#{sent_idx}")]
    UnknownSentence { doc_id: String, sent_idx: usize },

    #[error("sentence index {index} out of range for document {doc_id} with {len} sentences")]
    IndexOutOfRange {
        doc_id: String,
        index: usize,
        len: usize,
    },

    #[error("source too long: {len} tokens, at most {max} allowed")]
    SourceTooLong { len: usize, max: usize },

    #[error("{doc_id}#{sent_idx}: {source}")]
    AtSentence {
        doc_id: String,
        sent_idx: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("annotation sets cover different sentence universes")]
    UniverseMismatch,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss in batch {batch} of epoch {epoch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
