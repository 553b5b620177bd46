use kp_core::error::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Parameter errors raised while validating a config.
    pub fn from_config(e: Error) -> Self {
        CliError::Config(e.to_string())
    }

    /// Process exit code: 1 for a verdict failure, 2 for numerical
    /// trouble, 3 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 3,
            CliError::Numeric(e) => match e {
                Error::BoundViolation { .. } | Error::JumpTooLarge { .. } => 1,
                Error::NumericalNonConvergence(_) | Error::DivergenceDetected { .. } | Error::TruncationWarning { .. } => 2,
                Error::InvalidParams(_) | Error::DegenerateScaling | Error::EtaOutOfRange(_) => 3,
            },
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Numeric(e)
    }
}
