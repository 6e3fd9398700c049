use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input of {len} samples is shorter than one frame ({frame} samples)")]
    EmptyOutput { len: usize, frame: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in band {band}, tap {tap}")]
    NonFinite { band: usize, tap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot scale {0}: component has no active signal power")]
    Scaling(&'static str),

    #[error("missing oracle data: {0}")]
    MissingOracle(&'static str),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("weight file: {0}")]
    Weights(String),

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("controller failed at frame {frame}: {source}")]
    Controller {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }
}
