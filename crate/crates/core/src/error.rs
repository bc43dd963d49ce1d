use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("point {0:?} not found inside the mesh")]
    PointNotFound(Vec<f64>),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("quadrature degree {degree} unsupported on dimension-{dim} simplices")]
    UnsupportedQuadrature { degree: usize, dim: usize },

    #[error("non-finite value at node {node} ({coords:?})")]
    NonFinite { node: usize, coords: Vec<f64> },

    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
