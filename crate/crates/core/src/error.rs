use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
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

    #[error("{0}: input is empty")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot score an empty sentence")]
    EmptySentence,

    #[error("non-finite perplexity: {0}")]
    NonFinite(f64),

    #[error("nothing to learn: {0}")]
    NothingToLearn(String),

    #[error("external process `{command}`: {message}")]
    External { command: String, message: String },

    #[error("pair {pair_id}: {source}")]
    Pair {
        pair_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Format(String),

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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn at_pair(self, pair_id: usize) -> Self {
        match self {
            e @ Error::Pair { .. } => e,
            other => Error::Pair {
                pair_id,
                source: Box::new(other),
            },
        }
    }
}
