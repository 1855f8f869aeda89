use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies outside the {domain} (violation {violation:.3e})")]
    DomainViolation {
        domain: &'static str,
        violation: f64,
    },

    #[error("numerical failure in {context}: residual {residual:.3e}")]
    Numerical { context: String, residual: f64 },

    #[error("non-finite oracle output at iteration {iteration}")]
    NonFiniteOracle { iteration: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            context: context.into(),
            residual,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
