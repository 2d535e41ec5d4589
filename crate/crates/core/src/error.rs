use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid campaign: {0}")]
    InvalidCampaign(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no testing effort: every test-case count is zero")]
    NoTestingEffort,

    #[error("kernel undefined without test cases (max test-case count is 0)")]
    KernelUndefined,

    #[error("impossible configuration: a detected candidate is marked as not real")]
    ImpossibleConfiguration,

    #[error("candidate ceiling below detected count ({ceiling} < {detected})")]
    CeilingBelowDetected { ceiling: usize, detected: u64 },

    #[error("diagnostics: {0}")]
    Diagnostics(String),

    #[error("unknown parameter `{name}`; available: {available}")]
    UnknownParameter { name: String, available: String },

    #[error("{0}")]
    Reliability(String),

    #[error("chain {chain} failed: {source}")]
    Chain {
        chain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fit failed for nu = {nu}: {source}")]
    Study {
        nu: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
