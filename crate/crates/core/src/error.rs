use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("feature {index} has value {value}, outside [0, 1]")]
    FeatureOutOfRange { index: usize, value: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    /// Fewer than two indices remain in the search domain.
    #[error("search domain exhausted: {remaining} active feature(s)")]
    DomainExhausted { remaining: usize },

    #[error("malformed IDX data at byte offset {offset}: {message}")]
    IdxFormat { offset: usize, message: String },

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("no correctly-classified samples to evaluate")]
    EmptyReport,

    #[error("weights file format error: {0}")]
    WeightsFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
