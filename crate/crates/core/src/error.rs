use thiserror::Error;

/// Errors raised by model construction, the exact solvers and the learners.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GtdError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("chain is not ergodic: {0}")]
    NonErgodic(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("coverage violated at state {state}, action {action}: target acts where behavior never does")]
    CoverageViolation { state: usize, action: usize },

    #[error("non-finite learner state at iteration {k}")]
    NonFinite { k: u64 },

    #[error("step size {dt} exceeds stability bound {bound}")]
    DtTooLarge { dt: f64, bound: f64 },

    #[error("eigenvalue computation failed: {0}")]
    Analysis(String),

    #[error("no valid instance after {0} generation attempts")]
    GenerationExhausted(usize),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GtdError {
    fn from(e: std::io::Error) -> Self {
        GtdError::Io(e.to_string())
    }
}

pub type Result<T, E = GtdError> = std::result::Result<T, E>;
