use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown activity label {input:?}; valid labels: {valid}")]
    UnknownLabel { input: String, valid: String },

    #[error("{0}")]
    Validation(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("sequence of {tokens} tokens exceeds maximum length {max_len} and would cut entity tokens")]
    Truncation { tokens: usize, max_len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input file not found: {}", .0.display())]
    InputNotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("endpoint error{}: {message}", if *.retriable { " (retriable)" } else { "" })]
    Endpoint { retriable: bool, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::InputNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code: 1 for invalid input, 2 for environment and endpoint failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Endpoint { .. } => 2,
            _ => 1,
        }
    }
}
