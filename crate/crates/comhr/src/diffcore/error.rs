use thiserror::Error;

pub type DiffResult<T> = Result<T, DiffError>;

/// Errors raised by the differentiation substrate.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid operand dims {dims:?} ({why})")]
    BadOperand {
        op: &'static str,
        dims: Vec<usize>,
        why: String,
    },

    #[error("log of non-positive value {value} at flat index {index}")]
    NonPositiveLog { index: usize, value: f64 },

    #[error("backward requires a scalar loss, got dims {dims:?}")]
    NonScalarLoss { dims: Vec<usize> },

    #[error("dims {dims:?} imply {expected} values, got {got}")]
    ShapeData {
        dims: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("gradient tracking is disabled for this graph")]
    TrackingDisabled,

    #[error("non-finite value while evaluating parameter {param:?} element {index} perturbed by {delta:+e}")]
    NonFiniteEval {
        param: String,
        index: usize,
        delta: f64,
    },

    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
}
