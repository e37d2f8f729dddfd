use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("unpaired files (no counterpart for: {})", .0.join(", "))]
    Unpaired(Vec<String>),

    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint shape mismatch for parameter `{name}`: {detail}")]
    ShapeMismatch { name: String, detail: String },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("checkpoint stage `{found}` cannot be used here (expected {expected})")]
    Stage { found: String, expected: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Coarse classification used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) | Error::Unpaired(_) | Error::Decode { .. } | Error::Io { .. } => {
                ErrorKind::Data
            }
            Error::VersionMismatch { .. }
            | Error::ShapeMismatch { .. }
            | Error::Truncated(_)
            | Error::Stage { .. }
            | Error::Checkpoint(_) => ErrorKind::Checkpoint,
            Error::Tensor(_) | Error::Shape(_) | Error::InvalidValue(_) => ErrorKind::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Checkpoint,
    Runtime,
}

/// Fails with an error naming every axis on which the two shapes disagree.
pub(crate) fn ensure_same_shape(
    what: &str,
    a: &candle_core::Tensor,
    b: &candle_core::Tensor,
) -> Result<()> {
    let (da, db) = (a.dims(), b.dims());
    if da == db {
        return Ok(());
    }
    if da.len() != db.len() {
        return Err(Error::Shape(format!(
            "{what}: rank {} vs rank {} ({da:?} vs {db:?})",
            da.len(),
            db.len()
        )));
    }
    let axes: Vec<String> = da
        .iter()
        .zip(db)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, (x, y))| format!("axis {i}: {x} vs {y}"))
        .collect();
    Err(Error::Shape(format!("{what}: {}", axes.join(", "))))
}
