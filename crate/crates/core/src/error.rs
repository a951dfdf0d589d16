use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("sequence {0} has zero length")]
    ZeroLengthSequence(usize),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("{path}: unsupported format version {version}")]
    BadVersion { path: PathBuf, version: u32 },

    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("caption {caption_id} references unknown image {image_id}")]
    DanglingImage { caption_id: String, image_id: String },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("unknown caption id {0}")]
    UnknownCaption(String),

    #[error("duplicate translation for caption {0}")]
    DuplicateTranslation(String),

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("no gold item for query {0}")]
    MissingGold(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no pseudopairs left after filtering")]
    NoPseudoPairs,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration or inputs rather
    /// than by numerics or the environment.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::BadMagic { .. }
                | Error::BadVersion { .. }
                | Error::Malformed { .. }
                | Error::DanglingImage { .. }
                | Error::Dimension { .. }
                | Error::UnknownCaption(_)
                | Error::DuplicateTranslation(_)
                | Error::DuplicateId(_)
                | Error::Json { .. }
                | Error::NoPseudoPairs
                | Error::Io { .. }
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
