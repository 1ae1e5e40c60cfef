use std::path::PathBuf;

use thiserror::Error;

use crate::pwnn::RunReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tape node produced NaN or an infinity.
    #[error("non-finite value at tape node {node}")]
    NonFinite { node: usize },

    /// Training of a single segment produced a non-finite loss or gradient.
    #[error("training diverged at iteration {iteration}: {source}")]
    Divergence {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// A full piecewise run aborted. The partial report keeps every trace
    /// recorded up to the failure.
    #[error("run aborted in round {round}, segment {segment}: {source}")]
    Aborted {
        round: usize,
        segment: usize,
        #[source]
        source: Box<Error>,
        partial: Box<RunReport>,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid layer spec: {0}")]
    LayerSpec(String),

    #[error("unknown problem `{name}` (valid: {valid})")]
    UnknownProblem { name: String, valid: String },

    #[error("invalid problem: {0}")]
    Problem(String),

    #[error("expression error at column {column}: {message}")]
    Expr { column: usize, message: String },

    #[error("x = {x} is outside [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("invalid interval [{lo}, {hi}]")]
    Interval { lo: f64, hi: f64 },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid training config: {0}")]
    Training(String),

    #[error("integration diverged at step {step} (x = {x})")]
    Integration { step: usize, x: f64 },

    #[error("gradient check failed: parameter {index} analytic {analytic:e} vs finite difference {numeric:e}")]
    GradientCheck {
        index: usize,
        analytic: f64,
        numeric: f64,
    },

    #[error("unsupported tape operation: {0}")]
    Unsupported(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn divergence(iteration: usize, source: Error) -> Self {
        Error::Divergence {
            iteration,
            source: Box::new(source),
        }
    }
}
