use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("integration diverged at step {step} (t = {time}): {detail}")]
    Diverged {
        step: usize,
        time: f64,
        detail: String,
    },

    #[error("rollout diverged at step {step}: |u|_inf = {max_abs}")]
    RolloutDiverged { step: usize, max_abs: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("batching error: {0}")]
    Batching(String),

    #[error("training aborted at epoch {epoch}, step {step}: {detail}")]
    Training {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
