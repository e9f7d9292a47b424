use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input for `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("decomposition: {0}")]
    Decomposition(String),

    #[error("instability at step {step} (t = {time:.6e}): {reason}")]
    Instability {
        step: usize,
        time: f64,
        reason: String,
        task: Option<usize>,
    },

    #[error("Newton did not converge for element {element:?} after {iterations} iterations (|R| = {residual:.3e})")]
    NonConvergence {
        element: Option<usize>,
        iterations: usize,
        residual: f64,
        iterate: Vec<f64>,
        task: Option<usize>,
    },

    #[error("singular matrix at pivot {0}")]
    Singular(usize),

    #[error("communication failure: {0}")]
    Comm(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Instability { .. } | Error::NonConvergence { .. } | Error::Singular(_)
        )
    }

    /// Attach the owning task id to a numerical failure.
    pub fn with_task(self, id: usize) -> Self {
        match self {
            Error::Instability {
                step, time, reason, ..
            } => Error::Instability {
                step,
                time,
                reason,
                task: Some(id),
            },
            Error::NonConvergence {
                element,
                iterations,
                residual,
                iterate,
                ..
            } => Error::NonConvergence {
                element,
                iterations,
                residual,
                iterate,
                task: Some(id),
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
