use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("data matrix is rank deficient (sigma_n/sigma_1 of the gram = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("gram matrix is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step size {eta} exceeds the admissible bound {eta_max}")]
    StepSizeViolation { eta: f64, eta_max: f64 },

    #[error("iteration diverged at step {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("run did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("inner dual solve did not converge (gradient norm {grad_norm:e} after {iterations} iterations)")]
    InnerSolve { grad_norm: f64, iterations: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectory was recorded every {record_every} steps; this check needs every step")]
    SparseRecording { record_every: usize },

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration cap of {cap} reached")]
    IterationCap { cap: usize },

    #[error("vertex enumeration supports at most {max} variables, got {got}")]
    SizeCap { max: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_shape(
    op: &'static str,
    m: &crate::Mat,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}
