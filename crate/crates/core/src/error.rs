use thiserror::Error;

/// Crate-wide error type. Contract violations (bad dimensions, invalid
/// arguments) are reported eagerly so numeric code never runs on
/// inconsistent shapes.
#[derive(Debug, Error)]
pub enum StmError {
    #[error("dimension mismatch in {op}: {details}")]
    DimensionMismatch { op: &'static str, details: String },

    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("degenerate neighborhood: {0}")]
    DegenerateNeighborhood(String),

    #[error("insufficient neighbors: {0}")]
    InsufficientNeighbors(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("truncated sampling infeasible: acceptance probability {prob:e} below 1e-6")]
    InfeasibleTruncation { prob: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("data format error in {path} at byte {offset}: {what}")]
    DataFormat {
        path: String,
        offset: u64,
        what: String,
    },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StmError>;
