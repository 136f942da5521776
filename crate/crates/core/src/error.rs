use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("support constraint violated: {0}")]
    Support(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The request is well-formed but has no answer (e.g. a return period
    /// shorter than the mean waiting time between exceedances).
    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("no feasible initialization found after {0} draws")]
    Initialization(usize),

    #[error("group {group} of the {level} partition is empty and cannot be repaired")]
    EmptyGroup { level: &'static str, group: usize },

    /// `subject` is the 1-based smallest member of the offending net.
    #[error("singular information matrix for the subject net of subject {subject} (condition number {condition:e})")]
    SingularHessian { subject: usize, condition: f64 },

    #[error("missing covariance for coefficient {0}")]
    MissingCovariance(String),

    #[error("parse error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<u64>, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Json(_) | Error::Io(_) => 2,
            Error::Infeasible(_) => 4,
            Error::InvalidArgument(_) | Error::NonFinite(_) | Error::Dimension(_) => 2,
            _ => 3,
        }
    }
}
