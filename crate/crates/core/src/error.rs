use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the operation's domain (empty set, zero frame,
    /// mismatched lengths or shapes).
    #[error("domain error: {0}")]
    Domain(String),
    /// The input cannot satisfy the operation at all, e.g. no image with two
    /// instances to draw pairs from.
    #[error("unsatisfiable input: {0}")]
    Unsatisfiable(String),
    /// Inconsistent configuration (embedding width, tile size, checkpoint).
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! domain {
    ($($arg:tt)*) => {
        $crate::error::Error::Domain(alloc::format!($($arg)*))
    };
}

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(alloc::format!($($arg)*))
    };
}

pub(crate) use config_err;
pub(crate) use domain;
