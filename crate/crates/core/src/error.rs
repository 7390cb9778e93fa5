use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("integrand returned a non-finite value at x = {at}")]
    NonFiniteIntegrand { at: f64 },

    #[error("quadrature did not reach tolerance {tol:e} (estimated error {estimate:e}) within {intervals} intervals")]
    ToleranceNotMet { tol: f64, estimate: f64, intervals: usize },

    #[error("ODE vector field returned a non-finite value at x = {at}")]
    NonFiniteVectorField { at: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("drive must exceed 1, got {0}")]
    InvalidDrive(f64),

    #[error("rate function has no finite upper bound for thinning")]
    UnboundedRate,

    #[error("change-of-variables point m = {0} lies outside [-1, 0)")]
    OutOfDomain(f64),

    #[error("relaxation temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("event cap reached with mean interval {mean_interval:e} s")]
    DegenerateRate { mean_interval: f64 },

    #[error("ODE state became non-finite after {step} substeps")]
    NonFiniteState { step: usize },

    #[error("channel {0} has zero variance")]
    DegenerateChannel(usize),

    #[error("theorem violation: {0}")]
    TheoremViolation(String),

    #[error("truncated-normal band `{0}` has negligible acceptance probability")]
    DegenerateBand(String),

    #[error("could not draw a distinct rate after {0} redraws")]
    Collision(usize),

    #[error("loss component `{0}` is not finite")]
    NonFiniteLoss(String),

    #[error("training diverged at epoch {epoch}: loss {loss:e}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("band `{0}` has no records")]
    EmptyBand(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Stable variant name for structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFiniteIntegrand { .. } => "NonFiniteIntegrand",
            Error::ToleranceNotMet { .. } => "ToleranceNotMet",
            Error::NonFiniteVectorField { .. } => "NonFiniteVectorField",
            Error::Domain(_) => "Domain",
            Error::NonFiniteGradient(_) => "NonFiniteGradient",
            Error::InvalidDrive(_) => "InvalidDrive",
            Error::UnboundedRate => "UnboundedRate",
            Error::OutOfDomain(_) => "OutOfDomain",
            Error::InvalidTemperature(_) => "InvalidTemperature",
            Error::Shape(_) => "Shape",
            Error::DegenerateRate { .. } => "DegenerateRate",
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::DegenerateChannel(_) => "DegenerateChannel",
            Error::TheoremViolation(_) => "TheoremViolation",
            Error::DegenerateBand(_) => "DegenerateBand",
            Error::Collision(_) => "Collision",
            Error::NonFiniteLoss(_) => "NonFiniteLoss",
            Error::TrainingDiverged { .. } => "TrainingDiverged",
            Error::EmptyBand(_) => "EmptyBand",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Io { .. } => "Io",
            Error::Json { .. } => "Json",
        }
    }
}
