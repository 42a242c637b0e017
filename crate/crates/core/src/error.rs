use std::path::PathBuf;

use crate::pricing::LossHistory;

/// Broad failure class, used by the command line front end to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} = {value} is outside the domain [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid configuration at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("rolling-horizon LP is {status} at control cycle {cycle}")]
    LpFailed { cycle: usize, status: String },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize, history: LossHistory },
    #[error("missing artifact {0}; run the prerequisite stage first")]
    MissingArtifact(PathBuf),
    #[error("malformed artifact {path}: {msg}")]
    Artifact { path: PathBuf, msg: String },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain { .. } | Error::Config { .. } | Error::Dimension { .. } | Error::Toml(_) => {
                ErrorKind::Validation
            }
            Error::Numerical(_) | Error::LpFailed { .. } | Error::TrainingDiverged { .. } => {
                ErrorKind::Numerical
            }
            Error::MissingArtifact(_)
            | Error::Artifact { .. }
            | Error::Read { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Io,
        }
    }
}
