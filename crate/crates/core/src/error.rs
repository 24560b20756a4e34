use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid label space: {0}")]
    LabelSpace(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate camera: {0}")]
    Camera(String),
    #[error("negative entry {value} at voxel {voxel}, label {label}")]
    NegativeEntry {
        voxel: usize,
        label: usize,
        value: f64,
    },
    #[error("label mass differs between voxel {voxel} and its axis-{axis} neighbour by {diff:e}")]
    InconsistentMass {
        voxel: usize,
        axis: usize,
        diff: f64,
    },
    #[error("expected {expected} semantic scores, got {got}")]
    ScoreCount { expected: usize, got: usize },
    #[error("empty vector")]
    Empty,
    #[error("instance too large to enumerate: {0} labelings")]
    EnumerationBound(u128),
    #[error("index {index} out of bounds for axis {axis} of size {size}")]
    OutOfBounds {
        axis: usize,
        index: usize,
        size: usize,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
