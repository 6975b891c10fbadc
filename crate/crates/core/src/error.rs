use std::io;

use thiserror::Error;

/// Errors produced by the annotation engine and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("unknown id {0}")]
    UnknownId(String),

    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class count mismatch: expected {expected}, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },

    #[error("sample {id} already annotated at sequence {sequence}")]
    AlreadyAnnotated { id: String, sequence: u64 },

    #[error("unsupported {format} version {found} (supported: {supported})")]
    Version {
        format: &'static str,
        found: u16,
        supported: u16,
    },

    #[error("corrupt {format} data: {reason}")]
    Corrupt {
        format: &'static str,
        reason: String,
    },

    #[error("replay diverged at sequence {sequence}: {reason}")]
    ReplayDivergence { sequence: u64, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no session in {0}")]
    NoSession(String),

    #[error("session locked: {0}")]
    Locked(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code used in machine-parseable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicateId(_) => "duplicate_id",
            Error::UnknownId(_) => "unknown_id",
            Error::InvalidVector(_) => "invalid_vector",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ClassCountMismatch { .. } => "class_count_mismatch",
            Error::AlreadyAnnotated { .. } => "already_annotated",
            Error::Version { .. } => "version_mismatch",
            Error::Corrupt { .. } => "corrupt",
            Error::ReplayDivergence { .. } => "replay_divergence",
            Error::Empty(_) => "empty_input",
            Error::NoSession(_) => "no_session",
            Error::Locked(_) => "locked",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn corrupt(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            format,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
