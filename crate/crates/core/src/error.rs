use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error(
        "nonlinear solve did not converge in {iterations} outer iterations \
         (last relative residual {last_residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("linear solver breakdown: {0}")]
    LinearBreakdown(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("unsupported dimension d = {0}")]
    UnsupportedDimension(usize),

    #[error("invalid weight: {reason} (int a cos = {int_cos:.3e}, int a sin = {int_sin:.3e}, min a = {min_a:.3e}, max a = {max_a:.3e})")]
    InvalidWeight {
        reason: String,
        int_cos: f64,
        int_sin: f64,
        min_a: f64,
        max_a: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("sweep error: {0}")]
    Sweep(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
