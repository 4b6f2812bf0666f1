use thiserror::Error;

/// Errors raised by the solver, generator and metric routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed layout, index or shape mismatch.
    #[error("structural error: {0}")]
    Structural(String),
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Instance too large for exhaustive enumeration.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    /// Non-finite intermediate. `site` names the coordinate, block or term.
    #[error("numerical failure at {site}: {detail}")]
    Numerical { site: String, detail: String },
    /// A fit stopped early; the trace holds every ELBO value recorded so far.
    #[error("fit aborted after {} iterations: {source}", elbo_trace.len())]
    FitAborted {
        source: Box<Error>,
        elbo_trace: Vec<f64>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn numerical(site: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            site: site.into(),
            detail: detail.into(),
        }
    }
}
