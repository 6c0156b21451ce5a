use thiserror::Error;

/// Errors raised across the modelling and fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or non-finite input to an operation.
    #[error("input error: {0}")]
    Input(String),

    /// Caller broke an operation's contract (e.g. identical level indices).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The requested quantity does not exist for the given inputs.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A mathematically undefined evaluation.
    #[error("undefined: {0}")]
    Undefined(String),

    /// A least-squares fit did not produce a usable result.
    #[error("fit error: {0}")]
    Fit(String),

    /// Malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed data file content.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} must be finite, got {v}")))
    }
}

pub(crate) fn ensure_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} must be positive and finite, got {v}")))
    }
}
