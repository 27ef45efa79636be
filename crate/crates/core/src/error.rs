use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    /// Exact enumeration would exceed the configured site budget.
    #[error("enumeration budget exceeded: {sites} sites > {budget}")]
    Budget { sites: usize, budget: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
