//! Error type shared by every module in the crate.

use std::fmt;
use std::io;

#[derive(Debug)]
pub enum Error {
    /// A caller violated an operation precondition (bad dimension, out-of-range
    /// id, negative multiplier, ...).
    InvalidArgument(String),
    /// The inputs are structurally valid but numerically degenerate for the
    /// requested operation (zero vector for a cosine distance, zero
    /// impressions for a click rate, ...).
    DegenerateInput(String),
    /// A text input could not be parsed. `line` is 1-based.
    Parse { line: usize, message: String },
    /// A file parsed but its contents violate the format's schema
    /// (inconsistent feature dimension, label id out of range, ...).
    Schema(String),
    /// Training produced a non-finite loss or gradient.
    Diverged(String),
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::DegenerateInput(m) => write!(f, "degenerate input: {m}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Schema(m) => write!(f, "schema error: {m}"),
            Error::Diverged(m) => write!(f, "training diverged: {m}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
