use thiserror::Error;

pub type Result<T> = std::result::Result<T, RuntimeError>;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Core(#[from] coded_conv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("config: {0}")]
    Config(String),
    #[error("unreachable workers: {}", .0.join(", "))]
    Handshake(Vec<String>),
    #[error("layer {layer}: missing subtasks {missing:?} after retry")]
    LayerFailure { layer: usize, missing: Vec<usize> },
    #[error("worker {worker} reported error {code}: {text}")]
    Remote { worker: usize, code: u16, text: String },
}

impl From<serde_json::Error> for RuntimeError {
    fn from(e: serde_json::Error) -> Self {
        RuntimeError::Config(e.to_string())
    }
}

impl From<csv::Error> for RuntimeError {
    fn from(e: csv::Error) -> Self {
        RuntimeError::Config(e.to_string())
    }
}
