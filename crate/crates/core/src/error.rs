use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("need at least 2 pilot samples, got {0}")]
    TooFewPilotSamples(usize),

    #[error("index {index} out of range for {len} alternatives")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("update rule {rule} cannot consume {given}")]
    RuleInputMismatch { rule: &'static str, given: &'static str },

    #[error("update rule {0} has no single-alternative knowledge-gradient form")]
    UnsupportedRule(&'static str),

    #[error("invalid degrees of freedom {0}")]
    InvalidDof(f64),

    #[error("importance weights degenerated (effective sample size {ess:.1} < {min})")]
    DegenerateWeights { ess: f64, min: f64 },

    #[error("correlation rho = {0} outside [0, 1)")]
    InvalidRho(f64),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("empirical table has too few rows or columns: {0}")]
    EmptyTable(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("{0}")]
    Parse(String),
}
