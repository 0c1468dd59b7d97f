use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the labeling and pose-recovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),
    #[error("no correspondences")]
    NoCorrespondences,
    #[error("correspondence weights sum to zero")]
    ZeroTotalWeight,
    #[error("insufficient correspondences: need at least {needed}, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("insufficient correspondences after edge exclusion: need at least {needed}, got {got}")]
    InsufficientAfterEdgeExclusion { needed: usize, got: usize },
    #[error("degenerate configuration")]
    DegenerateConfiguration,
    #[error("no consensus")]
    NoConsensus,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid keypoint set: {0}")]
    InvalidKeypoints(String),
    #[error("image dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("unknown instance id {0}")]
    UnknownInstance(u16),
    #[error("cannot place parts after {0} attempts")]
    CannotPlaceParts(usize),
    #[error("duplicate scene id {0}")]
    DuplicateScene(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
