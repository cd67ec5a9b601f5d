use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes, ranges or preconditions violated by the caller.
    InvalidInput(String),
    /// Signal power is zero so an SNR cannot be defined.
    ZeroPower,
    /// Problem too large for the exact enumeration path.
    TooLarge { what: &'static str, got: usize, max: usize },
    /// Data does not support the requested fit (e.g. zero variance).
    Degenerate(String),
    /// Nothing to work with (no samples, no runs, no excesses).
    Empty(String),
    /// A loss or gradient became non-finite.
    Divergence(String),
    /// Optimizer could not find any finite objective value.
    Optimization(String),
    /// A stored state does not belong to the requested training variant.
    VariantMismatch { expected: String, found: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::ZeroPower => write!(f, "signal has zero power, SNR is undefined"),
            Error::TooLarge { what, got, max } => {
                write!(f, "{what} too large for enumeration: {got} > {max}")
            }
            Error::Degenerate(msg) => write!(f, "degenerate data: {msg}"),
            Error::Empty(msg) => write!(f, "empty sample: {msg}"),
            Error::Divergence(msg) => write!(f, "training diverged: {msg}"),
            Error::Optimization(msg) => write!(f, "optimization failed: {msg}"),
            Error::VariantMismatch { expected, found } => {
                write!(f, "variant mismatch: expected {expected}, found {found}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
