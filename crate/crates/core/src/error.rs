use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("blow-up at t = {time}: {reason} (last good time {last_good_time})")]
    BlowUp {
        time: f64,
        last_good_time: f64,
        reason: String,
    },

    #[error("relation violated: residual {residual:e} exceeds {tolerance:e} at t = {time}")]
    RelationViolation {
        time: f64,
        residual: f64,
        tolerance: f64,
    },

    #[error("left the small-solution regime: {0}")]
    OutsideSmallRegime(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("domain truncation tainted the run: {0}")]
    Tainted(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
