//! Error type shared across the crate.

use crate::mlp::TrainingHistory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two objects that must agree on a dimension do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A prediction row with no entries was handed to a top-k selection.
    #[error("empty prediction row")]
    EmptyPredictionRow,

    /// Every video in the set has zero positive labels, so average
    /// precision has no denominator.
    #[error("no positive labels in label set")]
    NoPositiveLabels,

    /// A prediction matrix is constant, so correlation against it is
    /// undefined.
    #[error("constant predictions: correlation undefined")]
    ConstantPredictions,

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An optimizer step produced a non-finite gradient or parameter.
    #[error("diverged: non-finite gradient or parameter")]
    DivergedGradient,

    /// Training diverged. Carries the history recorded up to the failing
    /// epoch so callers can inspect the trajectory.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        history: Box<TrainingHistory>,
    },

    /// A checkpoint needed for reconstruction was not recorded.
    #[error("no checkpoint recorded for epoch {0}")]
    MissingCheckpoint(usize),

    /// The members of the claimed base ensemble are not all present in
    /// the extended ensemble.
    #[error("base ensemble is not contained in the extended ensemble")]
    NotAnExtension,

    /// A file failed structural validation. `detail` names the offending
    /// byte offset or line.
    #[error("malformed file {path}: {detail}")]
    Malformed { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(detail: impl Into<String>) -> Self {
        Error::DimensionMismatch(detail.into())
    }

    pub(crate) fn param(detail: impl Into<String>) -> Self {
        Error::InvalidParameter(detail.into())
    }
}
