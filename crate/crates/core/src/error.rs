use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("{what} distribution for (s={state}, a={action}) is invalid: {reason}")]
    BadDistribution {
        what: &'static str,
        state: usize,
        action: usize,
        reason: String,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("trajectory support of {size} exceeds the enumeration cap of {cap}")]
    SupportCapExceeded { size: u128, cap: usize },

    #[error("coordinate {index} is out of range for a {dim}-dimensional policy")]
    CoordinateOutOfRange { index: usize, dim: usize },

    #[error("behavior policy assigns zero probability to observed action {action} in state {state}")]
    ZeroBehaviorProbability { state: usize, action: usize },

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("estimator returned a non-finite value ({0})")]
    NonFinite(f64),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("MDP is not tree-structured: {0}")]
    NotATree(#[from] crate::cr_bound::TreeRejection),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
