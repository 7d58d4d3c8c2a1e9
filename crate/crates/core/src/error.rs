use alloc::string::String;
use core::fmt;

/// Errors surfaced by the engine's fallible operations.
///
/// Shape errors inside the autodiff graph itself are programmer errors and
/// panic with a dimension message instead of returning `Err`.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller violated an operation contract (empty input, id out of
    /// range, mismatched label widths, ...).
    Contract(String),
    /// Not enough classes or documents to satisfy a sampling request.
    InsufficientData(String),
    /// A meta-gradient came back non-finite; names the first offending
    /// parameter.
    NonFiniteGradient(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::NonFiniteGradient(name) => {
                write!(f, "non-finite meta-gradient in parameter `{name}`")
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
