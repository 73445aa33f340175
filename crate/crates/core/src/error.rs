use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed for '{id}': {message}")]
    Validation { id: String, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedding has zero norm")]
    ZeroNorm,

    #[error("need at least {required} elements, got {actual}")]
    TooFewElements { required: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("distance matrices do not share the same segment order")]
    OrderMismatch,

    #[error("pin for segment '{segment}' names track '{track}' which is not a candidate")]
    PinConflict { segment: String, track: String },

    #[error("objective cache drifted: cached {cached}, recomputed {recomputed}")]
    CacheInconsistency { cached: f64, recomputed: f64 },

    #[error("no ground truth for segment '{0}'")]
    MissingGroundTruth(String),

    #[error("average precision needs at least one positive label")]
    NoPositives,

    #[error("ROC analysis needs both classes present")]
    SingleClass,

    #[error("Mann-Whitney U needs two non-empty samples")]
    EmptySample,

    #[error("search space of {0} assignments exceeds the enumeration limit")]
    TooLarge(u128),

    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn validation(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            id: id.into(),
            message: message.into(),
        }
    }
}
