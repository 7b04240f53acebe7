use std::path::PathBuf;

use fvsr_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or truncated file; `offset` is the byte position where
    /// decoding stopped.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input size error: {0}")]
    InputSize(String),

    #[error("contract violated: {0}")]
    Contract(String),

    /// A fit or ratio whose inputs do not determine the answer.
    #[error("rank-deficient: {0}")]
    Degenerate(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
