//! Error type shared across the core library.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A scalar node or value was required.
    NotScalar {
        op: &'static str,
        shape: Vec<usize>,
    },
    /// A parameter violated its documented bounds.
    InvalidParam {
        name: &'static str,
        message: String,
    },
    /// A non-finite value (NaN or infinity) appeared where finiteness is required.
    NonFinite {
        context: &'static str,
        index: Option<usize>,
    },
    /// A condition label is not present in the embedding table.
    UnknownLabel { label: String },
    /// Two sequences that must align (trajectory, prompt track, schedule) disagree in length.
    Misaligned {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::NotScalar { op, shape } => {
                write!(f, "{op}: expected a scalar, got shape {shape:?}")
            }
            Error::InvalidParam { name, message } => write!(f, "invalid {name}: {message}"),
            Error::NonFinite { context, index } => match index {
                Some(i) => write!(f, "non-finite value in {context} at index {i}"),
                None => write!(f, "non-finite value in {context}"),
            },
            Error::UnknownLabel { label } => write!(f, "unknown condition label '{label}'"),
            Error::Misaligned {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected length {expected}, got {got}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
