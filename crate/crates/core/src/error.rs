use std::io;

use thiserror::Error;

/// Errors raised across the lab: data generation, model evaluation,
/// calibration and the experiment harness.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("value does not fit in {width} digits of base {base}")]
    Overflow { width: usize, base: u32 },

    #[error("task {task} expects {expected} operand(s), got {got}")]
    Arity {
        task: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty attention set")]
    EmptySet,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("only {got} correctly decoded samples, need at least {need}")]
    InsufficientCorrectSamples { got: usize, need: usize },

    #[error("step budget of {budget} exhausted; best validation accuracy {best_accuracy:.4}")]
    BudgetExhausted { budget: u64, best_accuracy: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
