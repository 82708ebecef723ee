//! Crate-wide error type.

use std::path::PathBuf;

use crate::losses::LossReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dimension mismatch between an operation's inputs.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A caller-supplied value violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed or inconsistent input data (cohort files, truth tables, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: u64,
        reason: String,
        last_report: Box<LossReport>,
    },

    /// A replica of a multi-run job failed.
    #[error("replica {replica} failed: {source}")]
    Replica {
        replica: usize,
        #[source]
        source: Box<Error>,
    },

    /// A metric has no defined value for the given input.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Checkpoint or stats file does not parse or is internally inconsistent.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    /// Checkpoint written by an incompatible format version.
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
