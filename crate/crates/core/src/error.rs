use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("fields or operators live on different meshes")]
    MeshMismatch,
    #[error("element {0} out of range")]
    ElementOutOfRange(usize),
    #[error("non-finite source value on edge {0}")]
    Evaluation(usize),
    #[error("factorization hit a zero pivot at column {column}")]
    ZeroPivot { column: usize },
    #[error("linear solve stalled: relative residual {residual:e}")]
    Stalled { residual: f64 },
    #[error("optimality system did not converge (last VI residual {last:e} after {} iterations)", history.len())]
    NotConverged { history: Vec<f64>, last: f64 },
    #[error("need at least {needed} points for a rate fit, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("unknown case `{0}`")]
    UnknownCase(String),
}
