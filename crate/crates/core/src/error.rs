use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the domain of the operation (time range, support).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed arguments: shape mismatches, zero counts, inconsistent inputs.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A non-finite value appeared where a finite one was required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("operation not supported for task `{task}`: {what}")]
    UnsupportedTask { task: String, what: String },

    #[error("observation {x} unreachable: accepted {accepted} of {draws} simulator draws")]
    UnreachableObservation {
        x: String,
        accepted: usize,
        draws: u64,
    },

    #[error("degenerate bandwidth: all pilot points coincide")]
    DegenerateBandwidth,

    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: usize, detail: String },

    #[error("sampling diverged at reverse step {step}")]
    SamplingDiverged { step: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], context: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context: context() })
    }
}
