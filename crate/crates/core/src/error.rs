use std::path::PathBuf;

/// Errors raised anywhere in the estimation and steering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("heading is antiparallel to the insertion axis; roll is undefined")]
    AntiparallelHeading,

    #[error("innovation covariance is not invertible")]
    SingularInnovation,

    #[error("network output norm {0:e} is too small to define a roll angle")]
    DegenerateOutput(f64),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("dataset generation stalled: slot {slot} failed {attempts} attempts (last error {last_error_mm:.3} mm)")]
    GenerationStalled {
        slot: usize,
        attempts: usize,
        last_error_mm: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
