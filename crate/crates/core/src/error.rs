use thiserror::Error;

/// Errors produced by the laboratory.
///
/// The variants line up with the process exit codes of the `lerwlab`
/// binary (see [`LabError::exit_code`]).
#[derive(Debug, Error)]
pub enum LabError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The request would exceed a resource gate (enumeration budget, kernel
    /// truncation cap, matrix size).
    #[error("resource gate: {0}")]
    ResourceGate(String),

    /// Too many replicas ran past the resolvable horizon.
    #[error("horizon overrun: {0}")]
    Overrun(String),

    /// A walk hit the `max_steps` cap before completing.
    #[error("walk truncated after {steps} steps (cap {cap})")]
    Truncated { steps: u64, cap: u64 },

    /// A coordinate left the representable range.
    #[error("coordinate overflow at step {0}")]
    CoordinateOverflow(u64),

    /// Spec file or command-line parse failure.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    /// Process exit code for this error: 2 parse, 3 precondition, 4 resource
    /// gate, 5 overrun, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Parse(_) => 2,
            LabError::Precondition(_) | LabError::Domain(_) => 3,
            LabError::ResourceGate(_) => 4,
            LabError::Overrun(_) | LabError::Truncated { .. } => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Precondition(msg.into()))
}
