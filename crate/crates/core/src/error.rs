use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{dim} = {value} is not divisible by {divisor}")]
    Divisibility { dim: &'static str, value: usize, divisor: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient pose for mask")]
    InsufficientPose,
    #[error("no garment foreground")]
    NoGarmentForeground,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("requested {requested} keyframes but the sequence has {available} frames")]
    TooManyKeyframes { requested: usize, available: usize },
    #[error("grid mismatch in conditioning part `{0}`")]
    GridMismatch(&'static str),
    #[error("window {0} lies outside the frame")]
    WindowOutsideFrame(String),
}
