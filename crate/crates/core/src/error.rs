use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("integration blew up at step {step}: non-finite coordinates")]
    IntegrationBlowup { step: u64 },

    #[error("singular covariance: Cholesky factorization failed after ridge {ridge:e}")]
    SingularCovariance { ridge: f64 },

    #[error("transition matrix is reducible into more components than macrostates; orphan states {orphans:?}")]
    Reducible { orphans: Vec<usize> },

    #[error("state {0} has no frames to draw from")]
    EmptyStatePool(usize),

    #[error("non-finite loss at batch element {index}")]
    NonFiniteLoss { index: usize },

    #[error("ODE integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("native contact set is empty")]
    EmptyNativeSet,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the command line front end:
    /// 2 for configuration errors, 3 for data errors, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Shape(_)
            | Error::InvalidArgument(_)
            | Error::Io { .. }
            | Error::Format { .. }
            | Error::EmptyStatePool(_)
            | Error::EmptyNativeSet => 3,
            Error::IntegrationBlowup { .. }
            | Error::SingularCovariance { .. }
            | Error::Reducible { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Divergence { .. } => 4,
        }
    }
}
