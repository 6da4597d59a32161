use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: missing column {0:?}")]
    MissingColumn(String),

    #[error("parse error: row {row}, column {column:?}: {value:?} is not a number")]
    Parse { row: usize, column: String, value: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Solver(#[from] mtfuse::Error),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<V> = std::result::Result<V, PipelineError>;

impl PipelineError {
    /// Process exit status: 2 for configuration problems, 3 for bad data,
    /// 4 when a solver stops before converging, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::MissingColumn(_) | Self::Parse { .. } | Self::Data(_) | Self::Read { .. } | Self::Csv(_) => 3,
            Self::Solver(e) => match e {
                mtfuse::Error::InvalidParameter(_) | mtfuse::Error::Budget { .. } => 2,
                mtfuse::Error::InvalidInput(_) | mtfuse::Error::Shape(_) => 3,
                mtfuse::Error::NotConverged { .. } => 4,
            },
            Self::Write { .. } => 1,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

pub(crate) fn data_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Data(msg.into())
}
