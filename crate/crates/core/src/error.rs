use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    Singular { jitter: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("hyperparameter training failed: {0}")]
    Training(String),

    #[error("target at index {index} is missing inside a monitoring window")]
    MissingData { index: usize },

    #[error("target at index {index} is missing before enough history is available")]
    InsufficientHistory { index: usize },

    #[error("labels contain a single class")]
    DegenerateLabels,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("evaluation subset is empty")]
    EmptyEvaluation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
