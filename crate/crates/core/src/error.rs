use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema version mismatch on line {line}: expected {expected}, found {found}")]
    SchemaVersion { line: usize, expected: u32, found: u32 },

    #[error("unparseable input:\n{}", .0.join("\n"))]
    Parse(Vec<String>),

    #[error("duplicate dialog id `{0}`")]
    DuplicateDialog(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("action {0} is masked in the current state")]
    MaskedAction(String),

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("incompatible model file: {0}")]
    IncompatibleModel(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::MissingModel(_) => ErrorKind::Config,
            Error::Io { .. }
            | Error::SchemaVersion { .. }
            | Error::Parse(_)
            | Error::DuplicateDialog(_)
            | Error::Data(_)
            | Error::IncompatibleModel(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::Shape(_)
            | Error::NonFinite(_)
            | Error::OutOfRange { .. }
            | Error::MaskedAction(_) => ErrorKind::Runtime,
        }
    }
}
