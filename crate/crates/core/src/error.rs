use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: spatial size {height}x{width} is not a multiple of {factor}")]
    NotDivisible {
        op: &'static str,
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("{op}: expected a binary map (values 0 or 1)")]
    NonBinary { op: &'static str },
    #[error("{op}: input contains NaN")]
    NotFinite { op: &'static str },
    #[error("{op}: values outside [0, 1]")]
    OutOfRange { op: &'static str },
    #[error("expected {expected} pyramid levels, found {found}")]
    LevelCount { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Shape },
}
