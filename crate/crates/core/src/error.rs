use thiserror::Error;

/// Errors raised by the signal store, integrators, predictors, controllers and
/// the scenario front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("node {index} is outside the grid of {count} nodes")]
    OutOfGrid { index: i64, count: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("node {index} was already written")]
    DoubleWrite { index: usize },

    #[error("time {t} is outside the recorded coverage")]
    OutOfCoverage { t: f64 },

    #[error("forward completeness violated: |x| exceeded {bound:e}")]
    ForwardCompletenessViolated { bound: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFiniteValue { context: &'static str },

    #[error("bilinear predictor requires AC = CA (max deviation {deviation:e})")]
    NonCommuting { deviation: f64 },

    #[error("tau must be an integer multiple of T (tau = {tau}, T = {period})")]
    SamplingPeriodMismatch { tau: f64, period: f64 },

    #[error("nominal feedback '{name}' failed the delay-free sanity run: {reason}")]
    NominalFeedbackSuspect { name: String, reason: String },

    #[error("trajectory too short: {samples} sampling periods, need at least {required}")]
    TooShort { samples: usize, required: usize },

    #[error("invalid bracket: {0}")]
    BracketInvalid(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// `DimensionMismatch` unless `got == expected`.
pub(crate) fn check_len(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
