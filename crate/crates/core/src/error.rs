use thiserror::Error;

use crate::lindich::Axis;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model `{name}` (available: pw_linear, transcritical, pitchfork, semilinear_demo, beverton_holt, scalar_affine, custom)")]
    UnknownModel { name: String },

    #[error("state leaves the domain at t = {t}")]
    DomainViolation { t: i64 },

    #[error("parameter {lambda} lies outside the admissible interval ({lo}, {hi})")]
    ParameterOutOfRange { lambda: f64, lo: f64, hi: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (final residual {final_residual:e})")]
    NonConvergence {
        iterations: usize,
        final_residual: f64,
        history: Vec<f64>,
    },

    #[error("non-hyperbolic linearization: the Newton matrix is numerically singular")]
    NonHyperbolic,

    #[error("no exponential dichotomy on {axis}: {reason}")]
    NoDichotomy { axis: Axis, reason: String },

    #[error("not Fredholm-checkable: no exponential dichotomy on {half_axis} ({reason})")]
    NotFredholmCheckable { half_axis: Axis, reason: String },

    #[error("numerical rank deficiency: {0}")]
    NumericalRank(String),

    #[error("no real branch: {0}")]
    NoRealBranch(String),

    #[error("no certificate: {0}")]
    NoCertificate(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure stems from bad user input rather than numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::UnknownModel { .. }
                | Error::ParameterOutOfRange { .. }
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
