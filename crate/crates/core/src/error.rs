use std::path::PathBuf;

/// Errors raised across the editing stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty text")]
    EmptyText,
    #[error("no object detected in frame {frame}")]
    DetectionFailure { frame: usize },
    #[error("timestep {t} outside [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("hash mismatch for {what}: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid_dimension",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::EmptyText => "empty_text",
            Error::DetectionFailure { .. } => "detection_failure",
            Error::TimestepOutOfRange { .. } => "timestep_out_of_range",
            Error::NonPositiveVariance(_) => "nonpositive_variance",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Divergence { .. } => "divergence",
            Error::EmptyRegion(_) => "empty_region",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
