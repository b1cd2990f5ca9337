use std::path::PathBuf;

use thiserror::Error;

/// Shape as `(rows, cols)`.
pub type Shape = (usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension { op: &'static str, lhs: Shape, rhs: Shape },

    #[error("matrix is singular: pivot {pivot} has magnitude {magnitude:e}")]
    Singular { pivot: usize, magnitude: f64 },

    #[error("linear solve residual {residual:e} exceeds {bound:e}")]
    IllConditioned { residual: f64, bound: f64 },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{op}: magnitude {norm:e} exceeds the supported range")]
    Magnitude { op: &'static str, norm: f64 },

    #[error("graphs are not aligned: {left} vs {right} nodes")]
    Alignment { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("training diverged at epoch {epoch} (last losses: {recent:?})")]
    Diverged { epoch: usize, recent: Vec<f64> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
