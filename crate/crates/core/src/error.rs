use thiserror::Error;

/// Errors produced by the lattice calculus, the steppers and the verifiers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("direction {direction} is not valid for a {dims}-dimensional grid")]
    InvalidDirection { direction: usize, dims: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("{name} = {value} is out of range ({range})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("operation requires a periodic grid")]
    NotPeriodic,

    #[error("operation requires a non-periodic grid")]
    Periodic,

    #[error("form degree {0} exceeds the lattice dimension")]
    DegreeOverflow(usize),

    #[error("Newton iteration did not converge after {iterations} iterations (residual norm {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("a Hessian is required for this operation")]
    MissingHessian,

    #[error("trajectory carries {0} tangent sequences, at least 2 are required")]
    MissingTangents(usize),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model `{model}` has no parameter `{parameter}`")]
    UnknownParameter { model: String, parameter: String },

    #[error("model `{model}` requires parameter `{parameter}`")]
    MissingParameter { model: String, parameter: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_step(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "step",
            value: tau,
            range: "> 0",
        })
    }
}
