use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("IPCW weight undefined at t = {0}: censoring support exhausted")]
    IpcwUndefined(f64),

    #[error("invalid intensity increment at t = {time}: {reason}")]
    InvalidIncrement { time: f64, reason: String },

    #[error("empty initial distribution")]
    EmptyInitialDistribution,

    #[error("{0}")]
    JackknifeUndefined(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("non-invertible information matrix")]
    NonInvertibleInformation,

    #[error("zero variance for coefficient {0}: p-value undefined")]
    ZeroVariance(usize),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
