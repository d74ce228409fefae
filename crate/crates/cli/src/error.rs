use latmorph_core::Error as CoreError;
use thiserror::Error;

/// Failure of one CLI command, mapped onto a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Numerical(String),

    #[error("{0}")]
    Incompatible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Incompatible(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::InvalidArgument(_) => CliError::Usage(msg),
            CoreError::Format { .. } | CoreError::Io(_) | CoreError::Json(_) => CliError::Io(msg),
            CoreError::NumericalFailure { .. }
            | CoreError::CellFailure { .. }
            | CoreError::TrainingDiverged { .. }
            | CoreError::SingularDesign { .. }
            | CoreError::Clustering(_) => CliError::Numerical(msg),
            CoreError::Incompatible(_) => CliError::Incompatible(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
