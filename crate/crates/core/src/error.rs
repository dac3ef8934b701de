use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio in {path}: {reason}")]
    UnsupportedAudio { path: PathBuf, reason: String },

    #[error("audio file {0} contains no samples")]
    EmptyAudio(PathBuf),

    #[error("clip too short: {samples} samples, at least {needed} required")]
    ClipTooShort { samples: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("unknown stage-2 model kind `{0}`")]
    UnknownModel(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("design matrix is rank deficient (pivot {pivot} = {value:e})")]
    RankDeficient { pivot: usize, value: f64 },

    #[error("missing prerequisite {}: run `attrsv {command}` first", artifact.display())]
    MissingPrerequisite {
        artifact: PathBuf,
        command: &'static str,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::UnknownModel(_) => ErrorCategory::Config,
            Error::Diverged { .. } | Error::RankDeficient { .. } => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }
}
