use thiserror::Error;

/// Errors produced by models, integrators and the estimation engine.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gradient-term index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("model has no per-datum gradient terms; SGLD requires them")]
    NoGradientTerms,

    #[error("non-finite state after {context}")]
    NonFiniteState { context: &'static str },

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    SolverNonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        /// Last iterate, for diagnostics.
        last: Vec<f64>,
    },

    #[error("singular linear system in {context}")]
    SingularSystem { context: &'static str },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sample failure rate {rate:.3} exceeds threshold {threshold} at level {level}")]
    ExcessiveFailures { level: u32, rate: f64, threshold: f64 },

    #[error("stratified coupling requires an even batch size, got {0}")]
    OddStratifiedBatch(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
