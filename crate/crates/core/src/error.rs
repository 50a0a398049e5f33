use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("potential registration failed: {0}")]
    Registration(String),

    #[error("degenerate potential: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solution blew up at t = {time}: max |u| = {max_abs} exceeds {limit}")]
    BlowUp { time: f64, max_abs: f64, limit: f64 },

    #[error("integration diverged at x = {x}: |u| = {max_abs} exceeds {limit}")]
    Divergence { x: f64, max_abs: f64, limit: f64 },

    #[error("constants inconsistency: {0}")]
    Constants(String),

    #[error("search space too large: {0}")]
    TooLarge(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
