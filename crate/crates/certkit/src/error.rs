use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositiveParam { name: String, value: f64 },

    #[error("system `{0}` has no jacobian")]
    MissingJacobian(String),

    #[error("trajectory diverged at step {step} (|x| = {norm:.3e})")]
    Divergence { step: usize, norm: f64 },

    #[error("trajectory too short: need at least {need} points, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("dataset has no derivative estimates; run differentiate first")]
    MissingDerivs,

    #[error("pair acceptance rate {rate:.3e} below 1e-3 after {attempts} attempts (slot {slot})")]
    AcceptanceRate {
        rate: f64,
        attempts: usize,
        slot: usize,
    },

    #[error("condition `{condition}` cannot be evaluated on this dataset: {reason}")]
    ConditionMismatch { condition: String, reason: String },

    #[error("functional is not built from supported primitives for this model: {0}")]
    UnsupportedFunctional(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("file format version mismatch: expected `{expected}`, found `{found}`")]
    Version { expected: String, found: String },

    #[error("malformed file at byte offset {offset}: {reason}")]
    Malformed { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
