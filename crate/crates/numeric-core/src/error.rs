use std::fmt;

/// Result alias used throughout the numeric crates.
pub type Result<T> = std::result::Result<T, NumericError>;

/// Errors emitted by tensor construction and tape operations.
#[derive(Clone, Debug, PartialEq)]
pub enum NumericError {
    /// Data length does not match the product of the shape.
    DataLength { expected: usize, got: usize },
    /// An op received inputs of incompatible shapes.
    ShapeMismatch { op: &'static str, detail: String },
    /// An op argument is out of range or otherwise unusable.
    InvalidArgument { op: &'static str, detail: String },
    /// A forward op produced a NaN or infinity.
    NonFinite { op: &'static str, context: String },
}

impl NumericError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NumericError::ShapeMismatch { op, detail: detail.into() }
    }

    pub fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        NumericError::InvalidArgument { op, detail: detail.into() }
    }
}

impl fmt::Display for NumericError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            NumericError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            NumericError::InvalidArgument { op, detail } => {
                write!(f, "invalid argument to {op}: {detail}")
            }
            NumericError::NonFinite { op, context } => {
                write!(f, "non-finite value produced by {op} ({context})")
            }
        }
    }
}

impl std::error::Error for NumericError {}
