use std::io;

use thiserror::Error;

/// Errors produced anywhere in the imaging pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x:.6e}, {z:.6e}) m lies outside the grid")]
    OutOfBounds { x: f64, z: f64 },

    #[error("non-finite or out-of-range speed of sound {value} at node ({i}, {k})")]
    InvalidSos { i: usize, k: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown scenario `{0}` (valid: M1, M2, M3, M4)")]
    UnknownScenario(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for configuration and usage problems, as opposed to failures
    /// while computing.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::UnknownScenario(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
