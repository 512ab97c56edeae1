use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs} vs {rhs}")]
    Dimension { op: &'static str, lhs: String, rhs: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{file}:{line}: {msg}")]
    SchemaAt { file: PathBuf, line: usize, msg: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: impl Into<String>, rhs: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }

    pub(crate) fn at(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::SchemaAt {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// `1` usage/configuration, `2` schema (including I/O and shape problems
    /// with input data), `3` numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_) => 3,
            Error::Dimension { .. }
            | Error::Schema(_)
            | Error::SchemaAt { .. }
            | Error::State(_)
            | Error::DegenerateBatch(_)
            | Error::DegenerateLabels(_)
            | Error::Io { .. } => 2,
        }
    }
}
