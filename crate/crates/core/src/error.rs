//! Crate error type.

use alloc::string::String;
use core::fmt;

/// Errors produced by the explanation pipeline and its supporting operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Raw detector output rows do not follow the `4 + 1 + C` layout.
    MalformedOutput {
        expected_row_len: usize,
        got: usize,
    },
    /// Image failed validation (size, range, or non-finite values).
    InvalidImage(String),
    /// The model exposes no convolution layers usable as targets.
    UnsupportedArchitecture(String),
    /// A layer id does not exist on the model.
    UnknownLayer(String),
    /// A capture session was queried for a layer it does not hold.
    LayerNotCaptured(String),
    /// The target score cannot be differentiated along the requested path.
    NonDifferentiableScore(String),
    /// Gradient map is all-zero; the layer carries no signal for the target.
    NoGradientSignal(String),
    /// Every target layer was skippable; no explanation can be formed.
    EmptyExplanation,
    /// The requested detection index is not among the parsed detections.
    InvalidTarget(String),
    /// Model construction input does not match the checkpoint or spec.
    Configuration(String),
    /// Inference failed; carries layer/context info.
    Inference(String),
    /// Shape mismatch between grids that must agree.
    ShapeMismatch {
        context: &'static str,
    },
    /// Aggregation over an empty record list.
    EmptyRecords,
    /// A pipeline stage failed; wraps the stage name and the cause.
    Stage {
        stage: &'static str,
        cause: alloc::boxed::Box<Error>,
    },
}

impl Error {
    /// Attaches a pipeline stage label to an error.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            cause: alloc::boxed::Box::new(self),
        }
    }

    /// Peels stage labels off to the underlying error.
    pub fn root(&self) -> &Error {
        let mut e = self;
        while let Error::Stage { cause, .. } = e {
            e = cause;
        }
        e
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::MalformedOutput {
                expected_row_len,
                got,
            } => write!(
                f,
                "malformed raw output row: expected 4+1+C = {expected_row_len} values, got {got}"
            ),
            Error::InvalidImage(msg) => write!(f, "invalid image: {msg}"),
            Error::UnsupportedArchitecture(msg) => {
                write!(f, "unsupported architecture: {msg}")
            }
            Error::UnknownLayer(id) => write!(f, "unknown layer: {id}"),
            Error::LayerNotCaptured(id) => write!(f, "layer not captured in session: {id}"),
            Error::NonDifferentiableScore(msg) => {
                write!(f, "score accessor is not differentiable: {msg}")
            }
            Error::NoGradientSignal(id) => {
                write!(f, "gradient map for layer {id} is all-zero; skip this layer")
            }
            Error::EmptyExplanation => {
                write!(f, "all target layers carried zero gradient; empty explanation")
            }
            Error::InvalidTarget(msg) => write!(f, "invalid explanation target: {msg}"),
            Error::Configuration(msg) => write!(f, "configuration error: {msg}"),
            Error::Inference(msg) => write!(f, "inference failure: {msg}"),
            Error::ShapeMismatch { context } => write!(f, "shape mismatch: {context}"),
            Error::EmptyRecords => write!(f, "cannot aggregate an empty record list"),
            Error::Stage { stage, cause } => write!(f, "[{stage}] {cause}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
