use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: face with {count} vertices (only triangles are supported)")]
    UnsupportedFace {
        path: PathBuf,
        line: usize,
        count: usize,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("voxel grid of {voxels} cells exceeds the limit of {limit}")]
    Resolution { voxels: u128, limit: u128 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate configuration: {what} has rank {rank} (need {required})")]
    Degenerate {
        what: &'static str,
        rank: usize,
        required: usize,
    },

    #[error("degenerate landmarks: {0}")]
    DegenerateLandmark(String),

    #[error("ill-conditioned system: smallest pivot {pivot:e} at row {index}")]
    Conditioning { pivot: f64, index: usize },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
