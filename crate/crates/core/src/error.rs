use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("symmetric eigendecomposition did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    EigNoConvergence { sweeps: usize, residual: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("parameter outside valid domain: {0}")]
    Domain(String),

    #[error("cannot sample {requested} negative edges: only {available} non-adjacent pairs exist")]
    InsufficientComplement { requested: usize, available: usize },

    #[error("layer kind {0} requires negative edges but the graph has none")]
    MissingNegativeEdges(&'static str),

    #[error("graph has no {0} edges")]
    NoEdges(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },

    #[error("empty result: {0}")]
    Empty(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}
