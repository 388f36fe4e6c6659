use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, loss: f64 },

    #[error("learning-rate schedule queried at epoch {epoch} outside [0, {total})")]
    EpochOutOfRange { epoch: f64, total: f64 },

    #[error("step {step} is not a scheduled pruning step")]
    NotAPruningStep { step: usize },

    #[error("sparsity {0} must lie in [0, 1)")]
    Sparsity(f64),

    #[error("layer {layer} would have no surviving weights")]
    DegenerateLayer { layer: usize },

    #[error("rewind checkpoint at iteration {0} was never captured")]
    MissingCheckpoint(usize),

    #[error("frequency ({i}, {j}) outside the centered range of a {d1}x{d2} grid")]
    Frequency {
        i: i64,
        j: i64,
        d1: usize,
        d2: usize,
    },

    #[error("heatmap mismatch: {0}")]
    HeatmapMismatch(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("requested {requested} samples but only {available} are available")]
    NotEnoughSamples { requested: usize, available: usize },

    #[error("augmentation `{0}` was selected but has no cards in the deck")]
    EmptyGroup(String),

    #[error("unknown {what}: `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}

/// Attach a path to an `io::Error`.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
