use thiserror::Error;

/// Errors raised by the forecasting library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate predictive variance (q = {0})")]
    DegenerateVariance(f64),
    #[error("conjugate solve did not converge for f = {f}, q = {q}")]
    NonConvergence { f: f64, q: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("distribution has no positive mass")]
    NoPositiveMass,
    #[error("loss undefined for this distribution: {0}")]
    LossDomain(String),
    #[error("data validation failed at {location}: {message}")]
    Validation { location: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cascade error: {0}")]
    Cascade(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { location: location.into(), message: message.into() }
    }

    /// True for failures of the numerical routines rather than of inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::DegenerateVariance(_) | Error::NonConvergence { .. } | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
