use thiserror::Error;

/// Errors produced by the numerical kernels and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NonSymmetric(f64),

    #[error("stencil of node {node} leaves the grid")]
    StencilOutOfRange { node: usize },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("infeasible data: {0}")]
    Infeasible(String),

    #[error("bracket failure: {0}")]
    Bracket(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no free boundary: {0}")]
    NoFreeBoundary(String),

    #[error("{what} fails at node {node}")]
    Precondition { what: String, node: usize },

    #[error("only {found} usable samples, {needed} needed")]
    TooFewSamples { found: usize, needed: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Bracket(_)
                | Error::NoConvergence { .. }
                | Error::NoFreeBoundary(_)
                | Error::TooFewSamples { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
