use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("segment stage is {found}, expected {expected}")]
    WrongStage {
        expected: &'static str,
        found: &'static str,
    },

    #[error("degenerate segment: standard deviation {0:e} is below 1e-12")]
    DegenerateSegment(f64),

    #[error("unsupported sample rate {0} Hz (pipeline requires 4000 Hz)")]
    SampleRate(u32),

    #[error("wav format: {0}")]
    WavFormat(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("split: {0}")]
    Split(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable token used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::WrongStage { .. } => "wrong_stage",
            Error::DegenerateSegment(_) => "degenerate_segment",
            Error::SampleRate(_) => "sample_rate",
            Error::WavFormat(_) => "wav_format",
            Error::Manifest(_) => "manifest",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Autodiff(_) => "autodiff",
            Error::Split(_) => "split",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Empty(_) => "empty",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
