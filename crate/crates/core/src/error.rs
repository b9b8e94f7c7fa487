use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LensError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LensError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,

    #[error("non-finite loss in batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("augmentation error: {0}")]
    Augmentation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("injection error: {0}")]
    Injection(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LensError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LensError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            LensError::Schema(_) => "schema",
            LensError::Encoding(_) => "encoding",
            LensError::Config(_) => "config",
            LensError::DimensionMismatch { .. } => "dimension_mismatch",
            LensError::ZeroNorm => "zero_norm",
            LensError::NonFiniteLoss { .. } => "non_finite_loss",
            LensError::NonFiniteGradient(_) => "non_finite_gradient",
            LensError::Augmentation(_) => "augmentation",
            LensError::Metric(_) => "metric",
            LensError::Injection(_) => "injection",
            LensError::Checkpoint(_) => "checkpoint",
            LensError::MissingArtifact(_) => "missing_artifact",
            LensError::Io { .. } => "io",
            LensError::Csv(_) => "csv",
            LensError::Json(_) => "json",
        }
    }
}
