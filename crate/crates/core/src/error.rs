use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the grille, codec, inpainting and pipeline layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("message of {needed} bits exceeds grille capacity of {capacity} bits")]
    CapacityExceeded { needed: usize, capacity: usize },

    #[error(
        "window of {rows}x{cols} at offset ({row}, {col}) overflows {height}x{width} image \
         by ({row_overflow}, {col_overflow})"
    )]
    WindowOutOfBounds {
        rows: usize,
        cols: usize,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
        row_overflow: usize,
        col_overflow: usize,
    },

    #[error("refusing lossy or unknown raster format for {0}")]
    LossyFormat(PathBuf),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("model container integrity check failed: {0}")]
    Integrity(String),

    #[error("unsupported model container version {0}")]
    Version(u32),

    #[error("grille file parse error on line {line}: {reason}")]
    GrilleFormat { line: usize, reason: String },

    #[error("no usable images: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
