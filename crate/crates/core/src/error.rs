use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MfimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected}); re-export it with a matching release")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MfimError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Validation(_) => "validation",
            Self::Shape(_) => "shape",
            Self::Numeric(_) => "numeric",
            Self::Argument(_) => "argument",
            Self::Data(_) => "data",
            Self::Parse { .. } => "parse",
            Self::Checkpoint(_) => "checkpoint",
            Self::CheckpointVersion { .. } => "checkpoint_version",
            Self::Image { .. } => "image",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, MfimError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> MfimError {
    MfimError::Shape(msg.into())
}

/// Fails with a shape error unless `got == want`.
pub(crate) fn expect_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(shape_err(format!("{what}: expected {want:?}, got {got:?}")))
    }
}
