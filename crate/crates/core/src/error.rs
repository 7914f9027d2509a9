use thiserror::Error;

use crate::architecture::ImpedanceViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is numerically singular (reciprocal condition {rcond:.3e} below {threshold:.1e})")]
    SingularMatrix { rcond: f64, threshold: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("reflection matrix has an eigenvalue within {distance:.3e} of +1; impedance diverges")]
    ThetaNearIdentity { distance: f64 },

    #[error("network assumption violated: block {block} has norm {norm:.3e} (tolerance {tolerance:.1e})")]
    AssumptionViolation {
        block: &'static str,
        norm: f64,
        tolerance: f64,
    },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("impedance violates the architecture constraints: {0}")]
    InvalidImpedance(ImpedanceViolation),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("quadrature did not converge: order {order} vs {refined} differ by {relative_change:.3e} (tolerance {tolerance:.1e})")]
    QuadratureNotConverged {
        order: usize,
        refined: usize,
        relative_change: f64,
        tolerance: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linearized objective dropped from {previous:.6e} to {current:.6e} at iteration {iteration}; step size too large")]
    NonMonotoneBeyondSlack {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("oracle search refused: {0}")]
    CostGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
