use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsscError>;

#[derive(Debug, Error)]
pub enum DsscError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("column {index} is zero and cannot be normalized")]
    ZeroColumn { index: usize },

    #[error("matrix is not square ({rows} x {cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("index ({row}, {col}) out of range for a {n} x {n} matrix")]
    IndexOutOfRange { row: usize, col: usize, n: usize },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e}){detail}")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        detail: String,
    },

    #[error("support pattern admits no doubly stochastic matrix (dual objective {objective:.3e}, feasible bound {bound:.3e}): {detail}")]
    InfeasibleSupport {
        objective: f64,
        bound: f64,
        detail: String,
    },

    #[error("iterates diverged at iteration {iteration}: {what}")]
    Diverged { iteration: usize, what: String },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DsscError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        DsscError::InvalidInput(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        DsscError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
