use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is indefinite (eigenvalue {eigenvalue:.3e})")]
    Indefinite { eigenvalue: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("ensemble must have at least 2 members, got {0}")]
    InsufficientEnsemble(usize),

    #[error("integration diverged (non-finite state)")]
    NonFinite,

    #[error("member {member} diverged during forecast at cycle {cycle}")]
    MemberDiverged { member: usize, cycle: usize },

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("unsupported observation operator: {0}")]
    UnsupportedOperator(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("tuning failed: every grid point diverged")]
    TuningFailed,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
