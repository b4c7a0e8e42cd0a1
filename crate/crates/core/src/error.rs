use thiserror::Error;

#[derive(Debug, Error)]
pub enum KimuraError {
    #[error("malformed operator: {0}")]
    MalformedOperator(String),

    #[error("malformed measure: {0}")]
    MalformedMeasure(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear solve stagnated after {iterations} iterations (relative residual {residual:.3e}); trace tail: {trace:?}")]
    LinearSolve {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("quadrature inconclusive: {0}")]
    Quadrature(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KimuraError>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(KimuraError::Contract(msg.into()))
}
