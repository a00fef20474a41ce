use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum PsaharaError {
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("invalid utility: {0}")]
    InvalidUtility(String),
    #[error("invalid contract: {0}")]
    InvalidContract(String),
    #[error("non-coercive utility: {0}")]
    NonCoercive(String),
    #[error("tangency between segments {left} and {right} could not be bracketed")]
    Tangency { left: usize, right: usize },
    #[error("utility is not concave: {0}")]
    NotConcave(String),
    #[error("invalid market: {0}")]
    Market(String),
    #[error("root bracketing failed: {0}")]
    Bracket(String),
    #[error("value out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PsaharaError {
    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            PsaharaError::Domain(_) => "domain",
            PsaharaError::InvalidUtility(_) => "invalid_utility",
            PsaharaError::InvalidContract(_) => "invalid_contract",
            PsaharaError::NonCoercive(_) => "non_coercive",
            PsaharaError::Tangency { .. } => "tangency",
            PsaharaError::NotConcave(_) => "not_concave",
            PsaharaError::Market(_) => "market",
            PsaharaError::Bracket(_) => "bracket",
            PsaharaError::OutOfBounds(_) => "out_of_bounds",
            PsaharaError::Config(_) => "config",
            PsaharaError::Data(_) => "data",
            PsaharaError::Io(_) => "io",
            PsaharaError::Json(_) => "json",
            PsaharaError::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, PsaharaError>;
