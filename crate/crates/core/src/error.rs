use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("correlation matrix is not positive semi-definite")]
    NotPsd,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing FX rate for currency {0}")]
    MissingFx(usize),

    #[error("training diverged at step {step}, head {head}: {detail}")]
    TrainingDiverged {
        step: usize,
        head: String,
        detail: String,
    },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
