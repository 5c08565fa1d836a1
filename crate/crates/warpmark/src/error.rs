//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Input outside the mathematical domain of the operation.
    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },

    /// API misuse (non-scalar backward root, tensors from different graphs, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// The TPS interpolation system is singular (collinear or duplicate centers).
    #[error("singular system: {0}; retry with reg > 0")]
    Singular(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Bad configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Text-format parse failure with location.
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Unrecognized or unsupported file format.
    #[error("{path}: format error: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Checkpoint container problems (wrong magic, dtype, arch mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error per the CLI contract
    /// (2 config, 3 checkpoint, 4 I/O and file formats, 1 everything else).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Checkpoint(_) => 3,
            Error::Io { .. } | Error::Format { .. } | Error::Parse { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
