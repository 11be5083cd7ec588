use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration invalid: {0}")]
    InvalidConfiguration(String),

    #[error("kappa check failed: computed {computed}, expected {expected} (tolerance {tolerance})")]
    KappaMismatch {
        computed: f64,
        expected: f64,
        tolerance: f64,
    },

    #[error("graph is not a nearest-neighbor graph shape: {0}")]
    InvalidGraph(String),

    #[error("grid of {cells}x{cells} cells exceeds the cap of {cap}x{cap}")]
    GridTooLarge { cells: usize, cap: usize },

    #[error("energy cache drifted by {drift:e} (tolerance {tolerance:e}) at step {step}")]
    CacheDrift {
        drift: f64,
        tolerance: f64,
        step: u64,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
