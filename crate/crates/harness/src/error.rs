use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad command line or configuration.
    #[error("usage: {0}")]
    Usage(String),

    /// Unreadable or malformed input data, or failed output writes.
    #[error("data: {0}")]
    Data(String),

    #[error("solver: {0}")]
    Solver(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Solver(_) => 3,
        }
    }
}

/// Sorts a core error into usage, data or solver failures.
impl From<robcomp_core::Error> for HarnessError {
    fn from(e: robcomp_core::Error) -> Self {
        use robcomp_core::Error as E;
        match e {
            E::Parameter(_) => HarnessError::Usage(e.to_string()),
            E::Parse { .. } | E::EmptyData(_) | E::Io(_) | E::NonFiniteSample(_) => HarnessError::Data(e.to_string()),
            _ => HarnessError::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}
