use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (bad vector, ragged CSV, weights not
    /// summing to one, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Input is structurally fine but outside the domain of the requested
    /// operation (e.g. the zero-eigenvalue branch with p <= n).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver failed to converge.
    #[error("solver error: {message} (last residual {residual:.3e})")]
    Solver { message: String, residual: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn solver(msg: impl Into<String>, residual: f64) -> Self {
        Error::Solver {
            message: msg.into(),
            residual,
        }
    }

    /// Process exit code for the CLI: validation/domain failures map to 1,
    /// solver failures to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Solver { .. } => 2,
            _ => 1,
        }
    }
}
