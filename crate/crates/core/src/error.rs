use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed image data: {0}")]
    Malformed(String),
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("no files matching {pattern:?} in {dir}")]
    EmptySequence { dir: PathBuf, pattern: String },
    #[error("image {width}x{height} is too small: {reason}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        reason: String,
    },
    #[error("patch of radius {radius} at ({x}, {y}) leaves the image")]
    PatchOutOfBounds { x: usize, y: usize, radius: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("rank-deficient linear system")]
    RankDeficient,
    #[error("ransac found no model supported by at least {0} inliers")]
    NoConsensus(usize),
    #[error("zero-variance image: cosine similarity undefined")]
    ZeroVariance,
    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
