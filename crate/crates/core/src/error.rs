use std::path::PathBuf;

use crate::geometry::HeadPose;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("angle {0} deg is outside the binned range")]
    OutOfRange(f64),

    #[error("class index {0} is outside the binning")]
    InvalidIndex(usize),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    /// Pitch is too close to +/-90 deg for yaw and roll to be separated. The
    /// canonical decomposition (roll = 0) is attached.
    #[error("degenerate Euler decomposition near gimbal lock (pitch {:.4} deg)", .resolved.pitch)]
    DegenerateDecomposition { resolved: HeadPose },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("failed to load {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("sample {source_id}: {source}")]
    Sample {
        source_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at step {step}: non-finite loss")]
    DivergedTraining { step: u64 },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("evaluation set is empty after filtering ({dropped} samples dropped)")]
    EmptyEvaluation { dropped: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Load {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn for_sample(self, source_id: &str) -> Self {
        Error::Sample {
            source_id: source_id.to_string(),
            source: Box::new(self),
        }
    }
}
