use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("truncation leaves no probability mass below the threshold")]
    ZeroMass,

    #[error("element index {index} out of range for ground set of size {ground_size}")]
    IndexOutOfRange { index: usize, ground_size: usize },

    #[error("malformed feasibility family: {0}")]
    MalformedFamily(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("policy {policy} requires a {expected} family")]
    WrongFamily { policy: String, expected: &'static str },

    #[error("enumeration needs more than {cap} outcomes ({what})")]
    TooLarge { what: String, cap: u64 },

    #[error("policy {0} uses undeclared randomness; use Monte Carlo mode")]
    UndeclaredRandomness(String),

    #[error("policy {policy} accepted element {element}, making the selection infeasible")]
    InfeasibleAccept { policy: String, element: usize },

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("unknown generator: {0}")]
    UnknownGenerator(String),

    #[error("unknown policy: {0}")]
    UnknownPolicy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub(crate) fn bad(msg: impl Into<String>) -> Self {
        LabError::BadParams(msg.into())
    }
}
