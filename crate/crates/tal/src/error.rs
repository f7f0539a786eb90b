use std::path::PathBuf;

use tal_core::dataset::DatasetError;
use tal_core::metrics::EvalError;
use tal_core::network::TrainError;

/// Everything a pipeline stage can fail with.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite `{artifact}`: run `{stage}` first")]
    Missing { artifact: String, stage: &'static str },

    #[error("artifact `{artifact}` was built from a different configuration; rerun `{stage}` or pass --force")]
    Stale { artifact: String, stage: &'static str },

    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("numeric failure: {0}")]
    Numeric(TrainError),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Process exit status: 2 config, 3 missing or stale input, 4 numeric
    /// failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Missing { .. } | Error::Stale { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(msg) => Error::Config(msg.to_string()),
            TrainError::EmptyDataset => Error::Config(e.to_string()),
            e @ TrainError::NonFinite { .. } => Error::Numeric(e),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
