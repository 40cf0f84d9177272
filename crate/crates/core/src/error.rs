use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {index} has (near-)zero norm")]
    ZeroRow { index: usize },

    #[error("row {index} is not unit length (norm {norm})")]
    NotUnitNorm { index: usize, norm: f64 },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("bad dimension: {0}")]
    BadDimension(String),

    #[error("row counts differ: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },

    #[error("descriptor dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("similarity loss needs at least two views, got {0}")]
    NeedTwoViews(usize),

    #[error("kernel {kernel} does not fit a {height}x{width} raster")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },

    #[error("kernel size must be odd and positive, got {0}")]
    EvenKernel(usize),

    #[error("logit {value} at flat index {index} overflows exp()")]
    NumericOverflow { index: usize, value: f64 },

    #[error("point {index} lies outside the image")]
    OutOfBounds { index: usize },

    #[error("input size {height}x{width} is not divisible by 32")]
    BadInputSize { height: usize, width: usize },

    #[error("training diverged at step {step}: total loss {total} vs initial {initial}")]
    DivergenceDetected {
        step: usize,
        total: f64,
        initial: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
