use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no gradient available for tensor #{0} (detached or not on the tape)")]
    AbsentGrad(usize),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
