//! Error type shared across the pipeline stages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch at layer {layer}: expected {expected} inputs, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged ({context}) at step {step}")]
    Diverged { context: String, step: usize },

    #[error("{path}:{line}: {msg}")]
    CsvParse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("planner failed to reach a feasible trajectory: {0}")]
    Infeasible(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
