use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument was outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A scenario or model configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot schedule event at t={time} before current clock t={clock}")]
    Schedule { time: f64, clock: f64 },

    #[error("planning failed: {0}")]
    Planning(String),

    /// Two AUVs working adjacent strips would lose contact.
    #[error(
        "AUVs {a} and {b} would be {distance:.3} m apart on synchronized strips, exceeding comms range {range:.3} m"
    )]
    CommsRange {
        a: u32,
        b: u32,
        distance: f64,
        range: f64,
    },

    #[error("rate undefined: {0}")]
    UndefinedRate(String),

    /// An event handler failed; the run was aborted.
    #[error("handler failed at t={time}: {message}")]
    Handler { time: f64, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed json: {0}")]
    Json(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
