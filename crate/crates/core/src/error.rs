use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth {0} (must be positive and finite)")]
    InvalidDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("insufficient correspondences: {found} (need at least {needed})")]
    InsufficientCorrespondences { found: usize, needed: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("empty match set")]
    EmptyMatchSet,
    #[error("empty point set")]
    EmptyPointSet,
    #[error("no keyframes to optimize")]
    EmptyKeyframeSet,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeError {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("trajectories share only {0} associated poses (need at least 2)")]
    InsufficientOverlap(usize),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    WindowError {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
