use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("timestep {t} outside schedule range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("unknown class id {class} (model has {num_classes} classes)")]
    UnknownClass { class: usize, num_classes: usize },

    #[error("singular noise level sigma = {0}: signal coefficient vanishes")]
    Singular(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance in {0}: correlation undefined")]
    ZeroVariance(&'static str),

    #[error("non-monotone log-SNR sequence at step {step}")]
    NonMonotoneLambda { step: usize },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing upstream artifact {path}: run stage `{stage}` first")]
    Dependency { stage: &'static str, path: PathBuf },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_finite(values: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}
