use thiserror::Error;

use crate::graph::NodeKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("edge ({holder}, {fund}) out of range for graph with {num_holders} holders and {num_funds} funds")]
    EdgeOutOfRange {
        holder: usize,
        fund: usize,
        num_holders: usize,
        num_funds: usize,
    },

    #[error("{kind:?} index {index} out of range (count {count})")]
    NodeOutOfRange {
        kind: NodeKind,
        index: usize,
        count: usize,
    },

    #[error("no negative edges available: graph is complete")]
    NoNegativeEdges,

    #[error("invalid edge split: {0}")]
    InvalidSplit(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: negative market value {value}")]
    NegativeMarketValue { line: u64, value: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("attribute {family}={value} is not in the feature schema")]
    UnknownAttribute { family: String, value: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward requested without a recorded forward pass: {0}")]
    NoForward(String),

    #[error("no gradient recorded for parameter {0}")]
    MissingGradient(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("non-finite training loss {loss} at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("temporal leak: model fit on {fit_quarter} but truth quarter is {truth_quarter}")]
    TemporalLeak {
        fit_quarter: String,
        truth_quarter: String,
    },

    #[error("id space mismatch: {0}")]
    IdSpaceMismatch(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
