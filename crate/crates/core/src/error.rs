use thiserror::Error;

/// Errors surfaced by the runtime and the harness.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// The caller broke an API precondition (unknown channel, bad payload, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A fixed-capacity table (channels, process contexts) is full.
    #[error("resource error: {0}")]
    Resource(String),

    /// The runtime reached a state its algorithms rule out.
    #[error("internal error: {0}")]
    Internal(String),

    /// The run ended while this process was suspended; returned from every
    /// API call made after shutdown so process bodies unwind with `?`.
    #[error("process halted by runtime shutdown")]
    Halted,

    /// A process body panicked.
    #[error("process {pid} panicked: {message}")]
    ProcessPanic { pid: u32, message: String },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn resource(msg: impl Into<String>) -> Self {
        Error::Resource(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
