use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index {index} out of range for {op} (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter `{0}` has no gradient for this step")]
    MissingGradient(String),

    #[error("optimizer state does not match parameter store: {0}")]
    StateMismatch(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("function recorded stochastic ops (dropout enabled); gradient check requires determinism")]
    Stochastic,

    #[error("non-finite value while checking `{param}`")]
    NonFinite { param: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}
