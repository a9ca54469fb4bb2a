use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Pipeline,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(
        "parameter fingerprint mismatch: map/model built with {stored}, active config is {active}"
    )]
    FingerprintMismatch { stored: String, active: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),

    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("spatial index is empty")]
    EmptyIndex,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("segment map is empty")]
    EmptyMap,

    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("could only place {placed} of {requested} objects with the requested spacing")]
    InfeasibleSpacing { placed: usize, requested: usize },

    #[error("duplicate segment id {0}")]
    DuplicateSegment(u32),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Parse { .. }
            | Error::UnsupportedFormat(_)
            | Error::VersionMismatch { .. }
            | Error::FingerprintMismatch { .. }
            | Error::InvalidParams(_)
            | Error::InvalidTransform(_)
            | Error::WidthMismatch { .. }
            | Error::DuplicateSegment(_) => ErrorClass::Validation,
            Error::EmptyIndex
            | Error::EmptyCloud
            | Error::EmptyMap
            | Error::TooFewPoints { .. }
            | Error::SingleClass
            | Error::InfeasibleSpacing { .. } => ErrorClass::Pipeline,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
