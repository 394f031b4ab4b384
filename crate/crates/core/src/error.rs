use thiserror::Error;

/// Errors surfaced by scene validation, rendering, and the training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("primitive {id}: {reason}")]
    InvalidPrimitive { id: u64, reason: String },

    #[error("scene: {0}")]
    InvalidScene(String),

    #[error("camera projection matrix is rank-deficient")]
    RankDeficientCamera,

    #[error("projected covariance is degenerate (det = {det:.3e})")]
    DegenerateCovariance { det: f64 },

    #[error("image dimensions mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("tape is stale: scene or camera changed since render")]
    StaleTape,

    #[error("accumulator does not match scene (ids changed since reset)")]
    IdMismatch,

    #[error("split decision references unknown primitive id {0}")]
    UnknownPrimitive(u64),

    #[error("invalid split spec: {0}")]
    InvalidSplitSpec(String),

    #[error("loss must be smooth for this check (use the squared loss)")]
    NonSmoothLoss,

    #[error("non-finite loss at step {step} (value {value})")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
