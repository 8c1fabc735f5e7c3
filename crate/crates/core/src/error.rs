use thiserror::Error;

/// Errors surfaced by the geometry kernels.
#[derive(Error, Debug, Clone)]
pub enum GeoError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("scalar function evaluated within {dist:.3e} of pole at {pole:.17}")]
    Pole { pole: f64, dist: f64 },

    #[error("theta lies outside the closed admissible set (op norm {op_norm:.17} > pi)")]
    OutsideDomain { op_norm: f64 },

    #[error("solver failure in {what}: residual {residual:.3e}")]
    SolverFailure { what: &'static str, residual: f64 },

    #[error("consistency check failed in {what}: residual {residual:.3e}")]
    Consistency { what: &'static str, residual: f64 },

    #[error("operation {op} is not supported for family {family}")]
    UnsupportedFamily { op: &'static str, family: String },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, GeoError>;
