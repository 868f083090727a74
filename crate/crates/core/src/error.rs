use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SabrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SabrError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric input error: {0}")]
    NumericInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("point {index} is behind the camera (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("degenerate bounding box: height {0} must be positive")]
    DegenerateBox(f64),

    #[error("degenerate rotation: smallest singular value {0:e}")]
    DegenerateRotation(f64),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("integrity error in record {record}: {reason}")]
    Integrity { record: String, reason: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SabrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SabrError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        SabrError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
