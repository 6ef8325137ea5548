use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("range mismatch: expected {expected} image, found {found}")]
    RangeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode/encode image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} (timesteps {timesteps:?}, batch ids {ids:?})")]
    NonFiniteLoss {
        step: usize,
        timesteps: Vec<usize>,
        ids: Vec<String>,
    },

    #[error("no condition image for id '{0}'")]
    MissingCondition(String),

    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("unpaired files: {}", .0.join(", "))]
    UnpairedFiles(Vec<String>),

    #[error("external metric: {0}")]
    ExternalMetric(String),
}

impl Error {
    /// Stable, machine-parseable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ShapeMismatch { .. } | Error::RangeMismatch { .. } => "shape",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFiniteLoss { .. } => "training",
            Error::MissingCondition(_) => "condition",
            Error::Manifest { .. } => "manifest",
            Error::Config(_) => "config",
            Error::UnpairedFiles(_) => "unpaired",
            Error::ExternalMetric(_) => "external-metric",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
