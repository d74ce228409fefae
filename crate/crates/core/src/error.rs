use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("linear solve failed (relative residual {residual:e})")]
    NumericalFailure { residual: f64 },

    #[error("homogenization of cell {index} failed: {source}")]
    CellFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("singular design matrix: column `{column}` is collinear with {others:?}")]
    SingularDesign { column: String, others: Vec<String> },

    #[error("incompatible input: {0}")]
    Incompatible(String),

    #[error("clustering failed: {0}")]
    Clustering(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
