pub type Result<T> = std::result::Result<T, BivError>;

/// Error type shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum BivError {
    /// Invalid configuration: bad parameter values, unknown keys, inconsistent sections.
    #[error("config: {0}")]
    Config(String),

    /// Problems with dataset files or records.
    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Dimension mismatch between vectors, matrices or network layers.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Normal equations could not be solved; pivot fell below the floor.
    #[error("singular system: {0}")]
    Singular(String),

    /// The inverse-variance loss has no finite value for a zero noise variance.
    #[error("zero noise variance under an inverse-variance weighting")]
    ZeroVariance,

    /// Every sample in the mini-batch was filtered out by the cutoff threshold.
    #[error("cutoff filtered out the entire batch")]
    EmptyCutoffBatch,
}

impl BivError {
    pub fn config(msg: impl Into<String>) -> Self {
        BivError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        BivError::Data(msg.into())
    }
}
