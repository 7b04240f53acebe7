use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on axis {axis} (expected {expected}, got {got})")]
    Dimension {
        op: &'static str,
        axis: usize,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected}, got rank {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("shape {shape:?} holds {expected} elements but {got} were supplied")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: configuration error: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
