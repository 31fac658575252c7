use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite logits")]
    NonFiniteLogits,

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diverged at step {step}")]
    Diverged { step: usize },

    #[error("threshold too high: no instance passed tau_clip = {tau_clip}")]
    ThresholdTooHigh { tau_clip: f64 },

    #[error("teacher is not biased enough: target prediction imbalance ratio {ratio:.3} <= {required}; increase the domain shift or source imbalance")]
    TeacherNotBiased { ratio: f64, required: f64 },

    #[error("could not place {classes} centroids with separation {separation} after {attempts} attempts")]
    CentroidPlacement {
        classes: usize,
        separation: f64,
        attempts: usize,
    },

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientSamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("class {0} is empty")]
    EmptyClass(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
