use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the flowcast library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("invalid layer spec for {layer}: {detail}")]
    LayerSpec { layer: String, detail: String },

    #[error("backward called without a matching forward pass: {0}")]
    NoForward(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {detail} (at byte {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("not enough distinct samples for k-means: need {needed}, found {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("no usable records: {0}")]
    EmptyDataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            detail: detail.into(),
        }
    }
}
