use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch at node {node}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        node: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("node {node} is detached from the graph")]
    Detached { node: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NumError>;
