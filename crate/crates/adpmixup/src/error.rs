use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants map onto the CLI exit codes: configuration
/// problems exit with 2, stage failures with 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite value at {location}")]
    NonFinite { location: &'static str },

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Train {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("calibration requires at least 2 samples, got {0}")]
    Calibration(usize),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid dataset {path}: {detail}")]
    Dataset { path: PathBuf, detail: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient samples for pair ({pre_known}, {target}): got {got}, need {need}")]
    InsufficientSamples {
        pre_known: String,
        target: String,
        got: usize,
        need: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the name of the pipeline stage it aborted.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors that stem from bad user input rather than a failed run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Dataset { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
