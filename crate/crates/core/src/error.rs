use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("non-finite gradient in parameter tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("labels contain a single class; a binary SVM needs both")]
    SingleClass,

    #[error("SMO did not converge after {iterations} iterations (violation {violation:.3e}, tol {tol:.1e})")]
    NoConvergence {
        iterations: usize,
        violation: f64,
        tol: f64,
    },

    #[error("no support vectors: {0}")]
    NoSupportVectors(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("failed to read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
