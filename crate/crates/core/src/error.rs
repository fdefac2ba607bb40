use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing header column `{0}`")]
    MissingColumn(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no weight: every record has zero quantity")]
    NoWeight,

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("gap of {len} weeks before {before} exceeds the maximum of {max}; trim the leading gap first")]
    GapTooLong {
        len: usize,
        before: chrono::NaiveDate,
        max: usize,
    },

    #[error("series ends with a gap: no week after {0}")]
    TrailingGap(chrono::NaiveDate),

    #[error("empty {0} partition")]
    EmptyPartition(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("explosive or non-invertible model: {0}")]
    Explosive(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

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

    #[error("config: {0}")]
    Config(String),

    #[error("container: {0}")]
    Container(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
