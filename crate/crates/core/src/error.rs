use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("linear program is {0}")]
    Lp(LpStatus),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown name `{name}`; valid names: {valid}")]
    UnknownName { name: String, valid: String },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Terminal failure states of the simplex oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
            LpStatus::IterationLimit => "not solved within the iteration limit",
        };
        f.write_str(s)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
