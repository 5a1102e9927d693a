//! Error type shared by every module in the crate.

use std::fmt;

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An operation received arguments violating its contract (shape
    /// mismatch, out-of-range index, non-positive extent, ...).
    Argument(String),
    /// A block or model was assembled with inconsistent dimensions.
    Config(String),
    /// An architecture string or key=value file failed to parse.
    /// `position` is the byte offset of the offending character.
    Parse { position: usize, message: String },
    /// File I/O or binary format decoding failed. Decoding errors carry the
    /// byte offset at which the input stopped making sense.
    Io(String),
    /// A computation produced or encountered NaN/Inf.
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Parse { position, message } => {
                write!(f, "parse error at position {position}: {message}")
            }
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
