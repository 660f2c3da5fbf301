use thiserror::Error;

/// Errors raised across the forecasting library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented precondition (bad prices, malformed CSV, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An asset has zero variance inside the normalization window.
    #[error("asset `{0}` has zero variance inside the normalization window")]
    DegenerateAsset(String),

    /// A caller broke an API contract (dimension mismatch, asymmetric matrix, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: need {needed} rows, have {available}")]
    InsufficientData { needed: usize, available: usize },

    /// GARCH persistence alpha + beta >= 1 leaves the unconditional variance undefined.
    #[error("non-stationary GARCH parameters (alpha + beta = {0})")]
    NonStationary(f64),

    /// The regime filter lost all probability mass.
    #[error("regime filter degeneracy at step {step}: {reason}")]
    FilterDegeneracy { step: usize, reason: String },

    /// Likelihood maximization did not converge. Carries the best point seen.
    #[error("fit failed after {evals} evaluations (best objective {best_value})")]
    FitFailure {
        best_point: Vec<f64>,
        best_value: f64,
        evals: usize,
    },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
