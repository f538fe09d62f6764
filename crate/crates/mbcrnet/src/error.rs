use std::fmt;
use std::io;

/// Errors produced anywhere in the crate.
#[derive(Debug)]
pub enum Error {
    /// Tensor constructor or operation received incompatible shapes.
    ShapeMismatch { expected: String, got: String },
    /// Convolution input channel count does not match the kernel.
    ChannelMismatch { input: usize, kernel: usize },
    /// Convolution kernel is larger than the (padded) input.
    KernelExceedsInput { kernel: usize, input: usize, axis: &'static str },
    /// A model stage cannot be built with the requested sizes.
    InfeasibleShape { stage: String, detail: String },
    /// An argument violated a documented precondition.
    InvalidArg(String),
    /// Text record parse failure, with 1-based line number.
    Parse { line: usize, msg: String },
    /// A required lead is absent from a record.
    MissingLead(String),
    /// Record carries no diagnostic label text.
    MissingLabel,
    /// Binary container is malformed or has the wrong magic/version.
    Format(String),
    /// Configuration file or flag value is invalid.
    Config(String),
    /// Training diverged: a batch loss became non-finite.
    NonFiniteLoss { epoch: usize, step: usize },
    /// Evaluation was asked to run on an empty test set.
    EmptyTestSet,
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            Self::ChannelMismatch { input, kernel } => {
                write!(f, "channel mismatch: input has {input} channels, kernel expects {kernel}")
            }
            Self::KernelExceedsInput { kernel, input, axis } => {
                write!(f, "kernel exceeds input: kernel {kernel} > input {input} along {axis}")
            }
            Self::InfeasibleShape { stage, detail } => {
                write!(f, "infeasible shape at {stage}: {detail}")
            }
            Self::InvalidArg(msg) => write!(f, "invalid argument: {msg}"),
            Self::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Self::MissingLead(name) => write!(f, "missing lead {name}"),
            Self::MissingLabel => write!(f, "missing label"),
            Self::Format(msg) => write!(f, "container format error: {msg}"),
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::NonFiniteLoss { epoch, step } => {
                write!(f, "non-finite loss at epoch {epoch}, step {step}")
            }
            Self::EmptyTestSet => write!(f, "empty test set"),
            Self::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
