use std::path::PathBuf;

use thiserror::Error;

use crate::extract::io::MeshIoError;
use crate::field::FieldError;
use crate::geometry::GeometryError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::train::TrainError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Each module has its own error type; this wraps them so
/// the command layer can map failures onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    MeshIo(#[from] MeshIoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("numeric fault: {0}")]
    Numeric(String),
    #[error("{0}")]
    EmptySurface(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 for numeric/divergence failures, 2 for I/O and
    /// configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Geometry(_)
            | Error::Field(_)
            | Error::Nn(_)
            | Error::Train(_)
            | Error::Numeric(_)
            | Error::EmptySurface(_) => 1,
            Error::Metrics(_)
            | Error::MeshIo(_)
            | Error::Config { .. }
            | Error::Io { .. }
            | Error::Checkpoint { .. } => 2,
        }
    }
}
