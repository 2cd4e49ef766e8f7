use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
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

    #[error("unknown {kind} label '{label}'")]
    UnknownSymbol { kind: &'static str, label: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("{kind} id {id} out of range (count {count})")]
    Index {
        kind: &'static str,
        id: usize,
        count: usize,
    },

    #[error("no valid negative sample for triple after {attempts} attempts")]
    Exhausted { attempts: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint kind mismatch: expected '{expected}', found '{found}'")]
    Kind { expected: String, found: String },

    #[error("checkpoint vocabulary hash mismatch: expected {expected}, found {found}")]
    Incompatible { expected: String, found: String },

    #[error("missing input artifact {path}; run `rmna {producer}` first")]
    Dependency { path: PathBuf, producer: &'static str },

    #[error("invalid argument: {0}")]
    Argument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
