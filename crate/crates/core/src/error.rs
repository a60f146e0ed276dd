use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ill-conditioned data: Gram matrix not positive definite (last jitter {jitter:e})")]
    IllConditioned { jitter: f64 },

    #[error("plant failure: {0}")]
    Plant(String),

    /// Identification failed partway through; the actions executed so far are attached.
    #[error("identification failed after {} executed actions: {source}", executed.len())]
    Identification {
        #[source]
        source: Box<Error>,
        executed: Vec<crate::identification::ExecutedAction>,
    },

    /// A task failed partway; the partial result is attached.
    #[error("task failed after {} control steps: {source}", partial.steps_used)]
    Task {
        #[source]
        source: Box<Error>,
        partial: Box<crate::manipulation::TaskResult>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

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

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
