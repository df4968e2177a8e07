use thiserror::Error;

use crate::model::PowerPolicy;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("negative power {value} passed to a rate kernel")]
    Domain { value: f64 },

    #[error("operation not supported in region {0}")]
    UnsupportedRegion(String),

    #[error("utility is not concave: {0}")]
    InvalidUtility(String),

    #[error("no convergence: {context} (best residual {residual:e})")]
    Convergence { context: String, residual: f64 },

    #[error("search space too large: about {estimate} states exceeds the cap of {cap}")]
    SearchSpace { estimate: f64, cap: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("data causality still violated by {violation:e} after the last penalty round")]
    DataCausality { violation: f64, best: Box<PowerPolicy> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl Error {
    /// Process exit status: 3 when a solver failed to converge, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Convergence { .. } | Error::DataCausality { .. } => 3,
            _ => 2,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Shape(_) => "shape",
            Error::Domain { .. } => "domain",
            Error::UnsupportedRegion(_) => "unsupported_region",
            Error::InvalidUtility(_) => "invalid_utility",
            Error::Convergence { .. } => "convergence",
            Error::SearchSpace { .. } => "search_space",
            Error::Infeasible(_) => "infeasible",
            Error::DataCausality { .. } => "data_causality",
        }
    }
}
