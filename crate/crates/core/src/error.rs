use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scale: sigma must be > 0, got {0}")]
    InvalidScale(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("cannot classify trial {trial_id}: {reason}")]
    CannotClassify { trial_id: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("h0 = {h0} is outside the attainable interval ({low}, {high})")]
    OutOfRange { h0: f64, low: f64, high: f64 },

    #[error("missing stratum entry: {0}")]
    MissingStratum(String),

    #[error("ledger: {0}")]
    Ledger(String),

    #[error("corrupt ledger: {0}")]
    CorruptLedger(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;
