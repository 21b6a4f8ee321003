use std::fmt;

/// Errors produced by tensor construction, operators, and checkpoint I/O.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// The data buffer does not match the product of the extents.
    DataLength { expected: usize, got: usize },
    /// Two operand shapes cannot be combined under the op's rules.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A single operand has a shape the op cannot accept.
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    /// An axis argument is out of range for the operand's rank.
    AxisOutOfRange { op: &'static str, axis: usize, rank: usize },
    /// Convolution geometry produced a non-positive output extent.
    EmptyConvOutput {
        input: Vec<usize>,
        kernel: Vec<usize>,
        stride: [usize; 3],
        padding: [usize; 3],
        dilation: [usize; 3],
    },
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
    /// An index argument exceeds the extent it indexes into.
    IndexOutOfRange { op: &'static str, index: usize, extent: usize },
    /// Checkpoint bytes do not parse as the SKBA container format.
    Checkpoint(String),
    Io(String),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape volume {expected}")
            }
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::InvalidShape { op, shape, reason } => {
                write!(f, "{op}: invalid shape {shape:?}: {reason}")
            }
            TensorError::AxisOutOfRange { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            TensorError::EmptyConvOutput { input, kernel, stride, padding, dilation } => write!(
                f,
                "conv geometry yields non-positive output extent: input {input:?}, kernel {kernel:?}, \
                 stride {stride:?}, padding {padding:?}, dilation {dilation:?}"
            ),
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::IndexOutOfRange { op, index, extent } => {
                write!(f, "{op}: index {index} out of range for extent {extent}")
            }
            TensorError::Checkpoint(msg) => write!(f, "checkpoint: {msg}"),
            TensorError::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for TensorError {}

impl From<std::io::Error> for TensorError {
    fn from(e: std::io::Error) -> Self {
        TensorError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
