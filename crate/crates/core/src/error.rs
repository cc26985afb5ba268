use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A numerical routine left its valid domain (e.g. an indefinite matrix).
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),
    /// Exhaustive enumeration was asked to visit more points than allowed.
    #[error("enumeration of {size} points exceeds the cap of {cap}")]
    EnumerationCap { size: u128, cap: u128 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
