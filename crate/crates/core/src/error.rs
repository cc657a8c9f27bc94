use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0} out of range")]
    Range(String),

    #[error("{field} {reason}")]
    Validation { field: &'static str, reason: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular extinction matrix: |det| = {det:e} below tolerance {tolerance:e}")]
    Singular { det: f64, tolerance: f64 },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate regressor: reference series is constant")]
    DegenerateRegressor,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate-training: {0}")]
    DegenerateTraining(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("fold {fold}: {reason}")]
    Fold { fold: usize, reason: String },

    #[error("wire frame: {0}")]
    Wire(#[from] crate::wire::FrameError),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable kebab-case identifier, used by the CLI's error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Validation { .. } => "validation",
            Error::Domain(_) => "domain",
            Error::Singular { .. } => "singular",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::DegenerateRegressor => "degenerate-regressor",
            Error::Parameter(_) => "parameter",
            Error::DegenerateTraining(_) => "degenerate-training",
            Error::Schema(_) => "schema",
            Error::Fold { .. } => "fold",
            Error::Wire(_) => "wire",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
