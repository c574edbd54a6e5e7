use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout has {elements} elements but capacity is {capacity}")]
    Capacity { elements: usize, capacity: usize },

    #[error("label {label} is outside the vocabulary of {num_labels} classes")]
    Vocabulary { label: usize, num_labels: usize },

    #[error("invalid element geometry: {0}")]
    Geometry(String),

    #[error("condition error: {0}")]
    Condition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("timestep {t} outside 1..={steps}")]
    Timestep { t: usize, steps: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("non-finite loss at step {step}; offending batch written to {}", dump.display())]
    NonFinite { step: usize, dump: PathBuf },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
