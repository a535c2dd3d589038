use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller handed in data with the wrong shape, range or type.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A non-finite value appeared during a forward or backward pass.
    #[error("numerical fault in {location}: {detail}")]
    NumericalFault { location: String, detail: String },

    /// An operation was called out of order (backward before forward, step before backward, ...).
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("internal integrity error: {0}")]
    Integrity(String),

    #[error("degenerate label: {0}")]
    DegenerateLabel(String),

    #[error("degenerate subset: {0}")]
    DegenerateSubset(String),

    #[error("threshold calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("config error: {0}")]
    Config(String),

    /// A CSV or model file could not be parsed.
    #[error("{path}: {detail}")]
    BadFile { path: PathBuf, detail: String },

    #[error("missing artifact {name}: {path}")]
    MissingArtifact { name: String, path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::ProtocolViolation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn bad_file(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::BadFile {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::RejectedInput(_)
            | Error::BadFile { .. }
            | Error::MissingArtifact { .. }
            | Error::Io { .. }
            | Error::DegenerateLabel(_)
            | Error::DegenerateSubset(_) => 3,
            Error::NumericalFault { .. } => 4,
            Error::CalibrationFailure(_) => 5,
            Error::ProtocolViolation(_) | Error::Integrity(_) => 1,
        }
    }
}
