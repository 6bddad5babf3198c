use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot stratify: class `{class}` has {positives} positives, need at least {required}")]
    Stratification {
        class: String,
        positives: usize,
        required: usize,
    },

    #[error("no mask available for image `{0}`")]
    MissingMask(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("variance of the AUC difference is zero while AUCs differ ({auc_a} vs {auc_b})")]
    NumericalDegeneracy { auc_a: f64, auc_b: f64 },

    #[error("incomplete run, missing: {}", .0.join(", "))]
    IncompleteRun(Vec<String>),

    #[error("unsupported backbone: {0}")]
    UnsupportedBackbone(String),

    #[error("model produced a non-finite output: {0}")]
    ModelOutput(String),

    #[error("condition `{condition}` has only {available} test images, need {required}")]
    InsufficientImages {
        condition: String,
        available: usize,
        required: usize,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("phase `{0}` is closed")]
    PhaseClosed(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
