use thiserror::Error;

/// Errors raised by the modelling and design routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("covariance factorization failed after {attempts} jitter escalations")]
    Factorization { attempts: usize },

    #[error("all {starts} optimizer starts failed")]
    OptimizerFailed { starts: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("replication required: {0}")]
    ReplicationRequired(String),

    #[error("fewer than 3 usable designs (a_i >= 2) for stochastic kriging, found {found}; use the latent or parametric noise variants")]
    TooFewReplicatedDesigns { found: usize },

    #[error("simulator failure: {0}")]
    Simulator(String),
}

pub type Result<T> = std::result::Result<T, GpError>;
