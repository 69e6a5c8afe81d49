use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("probability vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },

    #[error("negative target weight {value} at class {class}")]
    NegativeTarget { class: usize, value: f64 },

    #[error("empty label set: {0}")]
    EmptySet(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("only {available} examples are eligible, {required} required")]
    InsufficientExamples { required: usize, available: usize },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{path}:{line}: {reason}")]
    MalformedRow {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: expected {expected} features, found {actual}")]
    InconsistentDimension {
        path: String,
        line: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{path}:{line}: label {label} is out of range")]
    RowLabelOutOfRange {
        path: String,
        line: usize,
        label: i64,
    },

    #[error("config error at key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("non-finite loss at epoch {epoch} in the {partition} partition")]
    NonFiniteLoss { epoch: usize, partition: &'static str },

    #[error("validation accuracy did not stabilize within {epochs} epochs")]
    NotStabilized { epochs: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("{value} is not in [0, 1]"),
        });
    }
    Ok(())
}
