use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate index {index} out of range for dimension {dim}")]
    CoordinateOutOfRange { index: usize, dim: usize },
    #[error("spatial dimension {0} is not supported (1 or 2)")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("derivative of order {0} requested, at most 2 is supported")]
    OrderTooHigh(usize),
    #[error("layer {0} has zero width")]
    ZeroWidth(usize),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask mismatch: {0}")]
    MaskMismatch(String),
    #[error("unknown PDE `{0}`")]
    UnknownPde(String),
    #[error("invalid value {value} for `{name}`: {reason}")]
    InvalidParameter { name: String, value: f64, reason: String },
    #[error("unknown parameter `{name}` for {pde}")]
    UnknownParameter { pde: String, name: String },
    #[error("{0} has no closed-form solution")]
    MissingExactSolution(String),
    #[error("{what}: {count} exceeds the limit of {cap}")]
    SizeCap { what: String, count: usize, cap: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
