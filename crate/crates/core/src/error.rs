use thiserror::Error;

use crate::flow::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("parameter out of range for model `{model}`: {reason}")]
    ParameterOutOfRange { model: String, reason: String },

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailed { t: f64, reason: String, partial: Box<Trajectory> },

    #[error("horizon {horizon} is shorter than the required {required}")]
    HorizonTooShort { horizon: f64, required: f64 },

    #[error("kernel exponent {exponent:.3e} exceeds the overflow guard for index {index} at t = {t}")]
    KernelOverflow { index: usize, t: f64, exponent: f64 },

    #[error("degenerate denominator {value:.3e} for component {index}")]
    DegenerateDenominator { index: usize, value: f64 },

    #[error("fixed-point iteration did not converge at k = {k} (last residual {:.3e})", history.last().copied().unwrap_or(f64::NAN))]
    IterationFailed { k: f64, history: Vec<f64> },

    #[error("iterate left the admissible set at k = {k}: {reason}")]
    ConeViolation { k: f64, reason: String },

    #[error("smallness regime violated: {0}")]
    SmallnessViolated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
