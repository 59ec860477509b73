use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A predictor or encoder was asked for output before it had enough history.
    #[error("not ready: {0}")]
    NotReady(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("NaN loss while training on batch {batch} (samples {samples:?})")]
    NanLoss { batch: usize, samples: Vec<usize> },

    #[error("brute-force oracle limited to min(rows, cols) <= {limit}, got {actual}")]
    OracleLimit { limit: usize, actual: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("frame index {got} does not follow {previous}")]
    FrameOrder { previous: u32, got: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime faults.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Parse { .. }
                | Error::DimensionMismatch { .. }
                | Error::FrameOrder { .. }
                | Error::Checkpoint(_)
        )
    }
}
