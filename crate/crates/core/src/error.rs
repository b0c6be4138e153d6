use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants map onto process exit codes in the CLI: configuration
/// problems are usage errors, dimension/data/consistency problems are data
/// errors and non-finite values are numeric errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value in layer {layer}: {detail}")]
    Numeric { layer: String, detail: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numeric(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric { layer: layer.into(), detail: detail.into() }
    }
}

pub(crate) fn ensure_same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}
