use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("cannot split {w_out} output columns into {k} pieces")]
    InfeasibleSplit { k: usize, w_out: usize },
    #[error("singular submatrix: pivot magnitude {pivot:e} below threshold")]
    SingularSubmatrix { pivot: f64 },
    #[error("degenerate fit: all samples are equal")]
    DegenerateFit,
    #[error("corrupted symbol stream: {0}")]
    Corruption(String),
    #[error("malformed tensor container: {0}")]
    Format(String),
}
