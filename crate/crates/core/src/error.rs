use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration; `key` names the offending setting.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("line {line}: `{key}`: {message}")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },

    #[error("shape mismatch: expected {expected} points, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("numerical blow-up at t = {t:e} s: {message}")]
    BlowUp { t: f64, message: String },

    #[error("imaginary-time solver did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse { .. } | Error::Shape { .. } | Error::Analysis(_) => 1,
            Error::BlowUp { .. } | Error::Convergence { .. } => 2,
            Error::Io(_) | Error::Checkpoint(_) => 3,
        }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape { expected, found })
    }
}
