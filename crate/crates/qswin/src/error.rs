use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants are grouped by how the CLI maps them to
/// exit codes: configuration/contract/validation problems exit with 2,
/// runtime failures (I/O, numerics) with 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("{op}: produced non-finite values")]
    Numeric { op: &'static str },

    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for bad input, 1 for runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. }
            | Error::Contract { .. }
            | Error::Config(_)
            | Error::Ingestion(_)
            | Error::Validation(_)
            | Error::UndefinedCorrelation(_) => 2,
            Error::Numeric { .. } | Error::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
