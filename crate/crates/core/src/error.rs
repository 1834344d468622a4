use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the geometry toolkit.
#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in {term}: {detail}")]
    NonFinite { term: String, detail: String },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GeomError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GeomError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        GeomError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad or missing input data rather than numerics.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, GeomError::NonFinite { .. })
    }
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;
