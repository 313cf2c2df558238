//! Error type shared by every module of the crate.

use thiserror::Error;

use crate::reconstruction::FixedPointReport;

#[derive(Debug, Error)]
pub enum ModelError {
    /// Two values built on different torus geometries were combined.
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    /// An input slice or matrix has the wrong size.
    #[error("input shape: expected {expected}, got {actual} ({what})")]
    InputShape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A constructor argument is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A documented operation precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The observability Gramian is too close to singular to invert.
    #[error(
        "observability failure: lambda_min = {lambda_min:.6e} is at or below \
         the threshold {threshold:.6e}"
    )]
    ObservabilityFailure { lambda_min: f64, threshold: f64 },

    /// The reconstruction fixed point did not contract to tolerance.
    #[error(
        "contraction failure after {} iterations (last increment {:.6e})",
        report.iterations,
        report.last_increment()
    )]
    ContractionFailure { report: Box<FixedPointReport> },

    /// A time integration left the trusted amplitude range.
    #[error("blow-up at step {step} (t = {time:.6}): sup |u| = {sup_norm:.6e}")]
    BlowUp {
        step: usize,
        time: f64,
        sup_norm: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
