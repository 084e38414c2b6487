use thiserror::Error;

/// Errors raised anywhere in the simulator or the optimizer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("bound not valid: {0}")]
    BoundValidity(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("estimation did not converge: {0}")]
    Estimation(String),

    #[error("unknown {kind} `{name}` (known: {known})")]
    Unknown {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("config has {} violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    Violations(Vec<String>),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used for CLI exit diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Numeric(_) => "numeric",
            Error::InfeasibleSchedule(_) => "infeasible_schedule",
            Error::BoundValidity(_) => "bound_validity",
            Error::Infeasible(_) => "infeasible",
            Error::Estimation(_) => "estimation",
            Error::Unknown { .. } => "unknown_name",
            Error::Violations(_) => "config_violations",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn invalid_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
