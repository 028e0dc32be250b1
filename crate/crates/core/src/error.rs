use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: need at least {needed} frames, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("event detection failed: {0}")]
    EventDetection(String),

    #[error("trial {trial}: window needs {needed} frames but only {got} recorded")]
    Windowing { trial: String, needed: usize, got: usize },

    #[error("feature {feature} has zero variance in the training split")]
    ZeroVariance { feature: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite values produced in {stage}")]
    Numeric { stage: String },

    #[error("latent integration produced a non-finite state at step {step}")]
    Integration { step: usize },

    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("invalid trial {trial}: {reason}")]
    InvalidTrial { trial: String, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }
}
