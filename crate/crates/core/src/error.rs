use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HsiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("cube file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("header/payload size mismatch: header implies {expected} bytes, payload has {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("malformed cube header: {0}")]
    Header(String),

    #[error("length mismatch: expected {expected} elements, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cube contains a non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("loss became non-finite at iteration {iteration} (value {value})")]
    NonFiniteLoss { iteration: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl HsiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            HsiError::MissingFile(path)
        } else {
            HsiError::Io { path, source }
        }
    }
}
