//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatching tensor extents. `axis` names the offending dimension.
    #[error("dimension mismatch in {op} on axis {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameterization: {0}")]
    Parameterization(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("non-finite value produced by `{op}` (graph node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("cdf table capacity exceeded: support of {support} symbols does not fit {precision}-bit precision")]
    TableCapacity { support: usize, precision: u32 },

    #[error("format error: {0}")]
    Format(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("executable `{name}` not found on PATH (codec binaries are not bundled; install it or fix the adapter command)")]
    MissingExecutable { name: String },

    #[error("codec command `{command}` failed with {status}: {output}")]
    CodecRun {
        command: String,
        status: String,
        output: String,
    },

    #[error("codec command `{command}` timed out after {seconds} s")]
    Timeout { command: String, seconds: u64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptStream(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
