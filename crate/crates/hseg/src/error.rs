use std::path::Path;

/// Failure of a command, carrying its process exit code class.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad flags or configuration; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or inconsistent input data; exit code 2.
    #[error("{0}")]
    Data(String),
    /// Guide fitting did not reach zero loss under `--strict`; exit code 3.
    #[error("{0}")]
    Convergence(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) => 2,
            Error::Convergence(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Data(format!("{}: {err}", path.display()))
    }
}

impl From<hseg_core::Error> for Error {
    fn from(e: hseg_core::Error) -> Self {
        match e {
            hseg_core::Error::Config(_) => Error::Usage(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
