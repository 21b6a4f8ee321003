use std::fmt;

use skimba_tensor::TensorError;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Tensor(TensorError),
    ChannelMismatch { expected: usize, got: usize },
    /// Dilation outside the supported {0, 1, 3} set.
    UnsupportedDilation(usize),
    /// MSCB effective kernel outside {5, 7}.
    UnsupportedKernel(usize),
    /// A voxel label at or above the configured class count.
    LabelOutOfRange { label: usize, classes: usize },
    /// Grid or latent geometry incompatible with the requested network.
    Geometry(String),
    Config(String),
    Io(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::ChannelMismatch { expected, got } => {
                write!(f, "channel mismatch: expected {expected}, got {got}")
            }
            ModelError::UnsupportedDilation(d) => {
                write!(f, "unsupported dilation {d}, expected one of 0, 1, 3")
            }
            ModelError::UnsupportedKernel(k) => {
                write!(f, "unsupported effective kernel {k}, expected 5 or 7")
            }
            ModelError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            ModelError::Geometry(msg) => write!(f, "geometry: {msg}"),
            ModelError::Config(msg) => write!(f, "config: {msg}"),
            ModelError::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
