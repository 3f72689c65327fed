use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),
    #[error("cells {a} and {b} are not face-adjacent")]
    NotAdjacent { a: usize, b: usize },
    #[error("well {well}: {reason}")]
    InvalidWell { well: usize, reason: String },
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("pressure solve did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },
    #[error("time step fell below the floor {floor:e} days at t = {time:.3} days")]
    CflUnderflow { floor: f64, time: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("evaluating decision vector {u:?}: {source}")]
    Evaluation { u: Vec<f64>, source: Box<CoreError> },
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io { context: context.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CoreError::Format { path: path.into(), reason: reason.into() }
    }
}
