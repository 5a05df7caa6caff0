use std::path::PathBuf;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training failure: {what} reached accuracy {accuracy:.3}, below the required {required:.2}")]
    TrainingFailure {
        what: String,
        accuracy: f64,
        required: f64,
    },

    #[error("non-finite {what} at iteration {iteration}{}", diagnostic_suffix(.diagnostic))]
    Diverged {
        iteration: u64,
        what: String,
        diagnostic: Option<PathBuf>,
    },

    #[error("frozen {network} parameters changed (hash {before} -> {after})")]
    FrozenMutated {
        network: String,
        before: String,
        after: String,
    },

    #[error("steering command rejected: {0}")]
    SteeringRejected(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("checkpoint {}: {reason}", .path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

fn diagnostic_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" (diagnostic checkpoint: {})", p.display()),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
