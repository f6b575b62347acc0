use thiserror::Error;

/// Errors raised by the library. Each variant corresponds to a class of
/// failure rather than to a module.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// An operation was called in a state where it is not defined.
    #[error("invalid state: {0}")]
    InvalidState(String),
    /// A numerical fault (non-finite value) occurred while simulating.
    #[error("simulation fault at t={t}: {message}")]
    SimulationFault { t: u64, message: String },
    /// A trace file ran out of events before the horizon.
    #[error("arrival trace exhausted after {0} events")]
    TraceExhausted(u64),
    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
