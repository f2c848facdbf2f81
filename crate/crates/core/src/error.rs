//! Error type shared by every fallible operation in the crate.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An operation that needs pixels was handed a zero-sized image.
    EmptyImage,
    /// A strictly positive scalar parameter was zero or negative.
    NonPositive { what: &'static str, value: f64 },
    /// A configuration failed validation.
    BadConfig(String),
    /// Tensor extents do not line up for the requested operation.
    ShapeMismatch(String),
    /// An extent must be a multiple of `divisor` but is not.
    NotDivisible {
        what: &'static str,
        extent: usize,
        divisor: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyImage => write!(f, "image has no pixels"),
            Error::NonPositive { what, value } => {
                write!(f, "{what} must be positive, got {value}")
            }
            Error::BadConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NotDivisible {
                what,
                extent,
                divisor,
            } => write!(f, "{what} = {extent} must be a multiple of {divisor}"),
        }
    }
}

impl core::error::Error for Error {}
