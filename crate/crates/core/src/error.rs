use thiserror::Error;

/// Errors surfaced by the kinematics, constraint, and control layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} must be a unit vector (norm = {norm})")]
    NotUnit { what: &'static str, norm: f64 },

    #[error("{what} must be a pure quaternion (real part = {real})")]
    NotPure { what: &'static str, real: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("quadratic program is infeasible (most violated row {row})")]
    Infeasible { row: usize },

    #[error("objective Hessian is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("initial state violates constraint `{constraint}` (margin {margin})")]
    InitialViolation { constraint: String, margin: f64 },

    #[error("scene parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
