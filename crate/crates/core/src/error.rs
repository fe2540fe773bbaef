use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("degenerate softmax row {row}: every entry is masked")]
    DegenerateRow { row: usize },

    #[error("index error: {0}")]
    Index(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("token file format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("checkpoint format error at byte {offset}: {msg}")]
    Checkpoint { offset: u64, msg: String },

    #[error("sequence of length {len} exceeds model capacity {max}")]
    Capacity { len: usize, max: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown speaker {0}")]
    UnknownSpeaker(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: {msg}")]
    Divergence { step: u64, msg: String },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::DegenerateRow { .. } => "degenerate-row",
            Error::Index(_) => "index",
            Error::Numeric(_) => "numeric",
            Error::Format { .. } => "format",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Capacity { .. } => "capacity",
            Error::EmptyInput(_) => "empty-input",
            Error::UnknownSpeaker(_) => "unknown-speaker",
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::MissingFile(_) => "missing-file",
            Error::Io(_) => "io",
        }
    }
}
