use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An export file could not be parsed; `field` names the offending header or payload field.
    #[error("load error in `{field}`: {detail}")]
    Load { field: String, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("filter design failed: {0}")]
    Design(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no subject qualifies: {0}")]
    EmptyDataset(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn load(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Load {
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Load { .. } => "load",
            Error::Argument(_) => "argument",
            Error::Shape(_) => "shape",
            Error::Design(_) => "design",
            Error::Fit(_) => "fit",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Fold { .. } => "fold",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
