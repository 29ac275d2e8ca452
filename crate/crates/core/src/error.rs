//! Crate-wide error type.
//!
//! Variants are grouped by who gets the blame: `exit_code` maps user-facing
//! input problems to 1 and internal contract violations to 2, which is what
//! the CLI reports.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    Shape(String),
    /// A graph input placeholder was never bound to a value.
    MissingInput(String),
    /// An operation was called outside its contract (non-scalar backward
    /// root, empty dataset, all-masked attention, ...).
    Contract(String),
    /// Invalid configuration or parameter bounds.
    Config(String),
    /// A dataset line could not be parsed. Line numbers are 1-based.
    Data { line: usize, message: String },
    /// Weight transfer failed for a named parameter group.
    Transfer { group: String, message: String },
    /// The finite-difference oracle cannot be used on this loss.
    OracleUnusable(String),
    /// A file could not be read or written.
    Io { path: String, source: std::io::Error },
    /// A serialized artifact (checkpoint, prediction file) is malformed.
    Format(String),
    /// Prediction files passed to the ensembler disagree on example ids.
    Alignment { id: String },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            line,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code the CLI should use for this error: 1 for
    /// validation/data problems, 2 for internal errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Data { .. }
            | Error::Transfer { .. }
            | Error::Io { .. }
            | Error::Format(_)
            | Error::Alignment { .. } => 1,
            Error::Shape(_)
            | Error::MissingInput(_)
            | Error::Contract(_)
            | Error::OracleUnusable(_) => 2,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::MissingInput(name) => write!(f, "missing input: `{name}` was never bound"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Data { line, message } => write!(f, "data error at line {line}: {message}"),
            Error::Transfer { group, message } => {
                write!(f, "transfer error for group `{group}`: {message}")
            }
            Error::OracleUnusable(msg) => write!(f, "finite-difference oracle unusable: {msg}"),
            Error::Io { path, source } => write!(f, "io error on `{path}`: {source}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Alignment { id } => {
                write!(f, "prediction files disagree on example id `{id}`")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
