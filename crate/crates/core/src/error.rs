use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("step index {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("pocket has no atoms")]
    EmptyPocket,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in layer {layer}")]
    NonFiniteLayer { layer: usize },
    #[error("non-finite guidance gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("non-finite coordinates at step {step}")]
    NonFiniteCoordinates { step: usize },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("categorical posterior has zero mass")]
    DegeneratePosterior,
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("metric needs at least two molecules")]
    Singleton,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLayer { .. }
                | Error::NonFiniteGradient { .. }
                | Error::NonFiniteCoordinates { .. }
                | Error::Divergence { .. }
                | Error::DegeneratePosterior
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
