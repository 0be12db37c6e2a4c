//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SclError>;

/// Errors produced by problem construction, simulation and estimation.
#[derive(Error, Debug)]
pub enum SclError {
    /// Shape or dimension mismatch in user-supplied data.
    #[error("structural error: {0}")]
    Structural(String),

    /// A coefficient oracle returned a non-finite value.
    #[error("oracle error: {oracle} returned a non-finite value at t={t}, x={x:?}, u={u:?}")]
    Oracle {
        oracle: String,
        t: f64,
        x: Vec<f64>,
        u: Vec<f64>,
    },

    /// A required symmetric block was supplied nonsymmetric.
    #[error("symmetry violation: {oracle} (defect {defect:.3e})")]
    Symmetry { oracle: String, defect: f64 },

    /// Forward integration produced NaN/overflow.
    #[error("integration error: non-finite state on path {path} at node {node}")]
    Integration { path: usize, node: usize },

    /// Fundamental-matrix product defect exceeded tolerance.
    #[error("conditioning error: fundamental-matrix product defect {defect:.3e} exceeds {tolerance:.3e}")]
    Conditioning { defect: f64, tolerance: f64 },

    /// Regression system unusable even after rank truncation.
    #[error("basis error: {0}; consider reducing the polynomial degree")]
    Basis(String),

    /// Invalid run or problem configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SclError {
    pub fn structural(msg: impl Into<String>) -> Self {
        SclError::Structural(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        SclError::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        SclError::Domain(msg.into())
    }
}
