use std::path::PathBuf;

use crate::trainer::TraceRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("construction failed after {attempts} attempts: {reason}")]
    RetryBudgetExhausted { attempts: usize, reason: String },

    #[error("quadrature cannot resolve order {order} with {nodes} nodes")]
    Quadrature { order: usize, nodes: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("acceptance rate {rate:.4} fell below {floor} after {draws} draws")]
    LowAcceptance { rate: f64, floor: f64, draws: usize },

    #[error("non-finite values at iteration {iter}")]
    Diverged { iter: usize, record: Box<TraceRecord> },

    #[error("non-finite particle update at step {step}")]
    NonFiniteParticles { step: usize },

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

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numeric aborts map to CLI exit code 2, everything else to 1.
    pub fn is_numeric_abort(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::NonFiniteParticles { .. }
        )
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
