use std::fmt;

/// Errors raised by tensor arithmetic, graph evaluation, simulation and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series too short: need at least {required} steps, got {got}")]
    SeriesTooShort { required: usize, got: usize },

    #[error("node {node} ({op}): {message}")]
    Node {
        node: usize,
        op: String,
        message: String,
    },

    #[error("input node {0} is not bound")]
    UnboundInput(usize),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("all {attempts} attempts failed: {reasons}")]
    AllFailed { attempts: usize, reasons: String },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
