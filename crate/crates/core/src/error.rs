use std::path::PathBuf;

use hyperweather_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("class {0} is not present")]
    AbsentClass(String),

    #[error("no expert registered for class {0}")]
    Routing(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("non-finite loss at step {step} of phase {phase}; batch seeds {seeds:?}")]
    NonFiniteLoss {
        phase: u8,
        step: usize,
        seeds: Vec<u64>,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
