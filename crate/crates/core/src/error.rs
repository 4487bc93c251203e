use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure to parse a clip filename, with the byte offset of the bad token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed clip name {name:?} at position {position}: {reason}")]
pub struct ClipNameError {
    pub name: String,
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    ClipName {
        path: PathBuf,
        #[source]
        source: ClipNameError,
    },

    #[error("no clips found under {0}")]
    EmptyDataset(PathBuf),

    #[error("inconsistent attributes for machine {0}: attribute tokens must be present on all clips or none")]
    InconsistentAttributes(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing embedding for clip {0}")]
    MissingEmbedding(String),

    #[error("machine has ground-truth attributes: {0}")]
    AttributedMachine(String),

    #[error("unknown machine: {0}")]
    UnknownMachine(String),

    #[error("zero variance: projection is undefined")]
    ZeroVariance,

    #[error("zero-norm embedding for {0}")]
    ZeroEmbedding(String),

    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing {what}: run the `{stage}` stage first (expected {path})")]
    MissingArtifact {
        what: String,
        stage: String,
        path: PathBuf,
    },

    #[error("config hash mismatch for {path}: produced by {found}, current config is {expected} (use --force to override)")]
    StampMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
