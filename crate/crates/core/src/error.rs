use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coefficient family: {0}")]
    InvalidFamily(String),

    #[error("coefficient field is not elliptic: lower bound {lower:.3e} on the sample set")]
    NotElliptic { lower: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("scale ε = {eps} does not divide the grid (h = {h})")]
    ScaleNotResolved { eps: f64, h: f64 },

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("incompatible data: ∫g − ∫h·n = {defect:.3e}")]
    Incompatible { defect: f64 },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("solver did not reach tolerance: relative residual {residual:.3e} > {tol:.3e}")]
    NotConverged { residual: f64, tol: f64 },

    #[error("invalid estimate request: {0}")]
    Estimate(String),

    #[error("invalid configuration at {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error on {path}: {source}")]
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
