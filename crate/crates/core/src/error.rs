use thiserror::Error;

/// Errors raised by set arithmetic, synthesis, and configuration handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("polytope is empty")]
    EmptySet,

    #[error("polytope is unbounded")]
    Unbounded,

    #[error("invalid polytope: {0}")]
    InvalidPolytope(String),

    #[error("schedule enumeration guard exceeded: N = {n} > {max}")]
    EnumerationGuard { n: usize, max: usize },

    #[error("invalid bucket parameters: {0}")]
    InvalidBucket(String),

    #[error("token bucket violation: level would drop to {raw}")]
    TokenViolation { raw: i64 },

    #[error("tube synthesis failed: {0}")]
    TubeSynthesis(String),

    #[error("constraint tightening failed: {0}")]
    Tightening(String),

    #[error("terminal synthesis failed: {0}")]
    TerminalSynthesis(String),

    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiDivergence(usize),

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("disturbance trace exhausted at step {0}")]
    TraceExhausted(usize),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed log: {0}")]
    Log(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
