use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (wrong vector length,
    /// stepping a finished episode, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite losses or gradients during optimization.
    #[error("training error: {0}")]
    Training(String),

    #[error("calibration failed: {message}")]
    Calibration {
        message: String,
        /// `(comm_range, mean random CR)` for every swept candidate.
        sweep: Vec<(f64, f64)>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
