use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("schema error at row {row}, column `{column}`: {message}")]
    Schema {
        row: usize,
        column: String,
        message: String,
    },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("training failed at epoch {epoch}: {message}")]
    TrainingFailure { epoch: usize, message: String },

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),

    #[error("integrity error in {}: {message}", file.display())]
    Integrity { file: PathBuf, message: String },

    /// A failure inside one cell of an experiment sweep.
    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn within(self, context: impl Into<String>) -> Self {
        Error::Run {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for failures caused by the filesystem rather than by bad input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Run { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
