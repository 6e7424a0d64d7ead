use noisygp::GpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<GpError> for CliError {
    fn from(e: GpError) -> Self {
        let msg = e.to_string();
        match e {
            GpError::InvalidParameter(_) => CliError::Config(msg),
            GpError::DimensionMismatch { .. }
            | GpError::EmptyInput(_)
            | GpError::InsufficientData(_)
            | GpError::ReplicationRequired(_)
            | GpError::TooFewReplicatedDesigns { .. } => CliError::Data(msg),
            GpError::Factorization { .. } | GpError::OptimizerFailed { .. } | GpError::Simulator(_) => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
