use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fission plan: {0}")]
    InvalidPlan(String),

    #[error("invalid grouping ratios: {0}")]
    InvalidRatios(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("exit {exit} has no surviving weights in stage {stage} (group {group})")]
    DeadExit {
        exit: usize,
        stage: usize,
        group: usize,
    },

    #[error("invalid sparsity {0}: must lie in [0, 1)")]
    InvalidSparsity(f64),

    #[error("pruning budget infeasible: {0}")]
    BudgetInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.to_string(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
