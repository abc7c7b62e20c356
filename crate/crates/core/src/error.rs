use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, step, bound or other user-facing parameter.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative solver ran out of iterations.
    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:.3e}){}", hint.as_deref().map(|h| format!("; {h}")).unwrap_or_default())]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        hint: Option<String>,
    },

    /// Inputs that must share a grid or support do not.
    #[error("incomparable inputs: {0}")]
    Incomparable(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A quantity left the representable range (NaN, overflow, negative mass).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
