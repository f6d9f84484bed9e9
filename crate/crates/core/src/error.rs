use thiserror::Error;

/// Errors produced by the optimization engine and experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no logistic parameters registered for K = {0}")]
    MissingParameter(u32),

    #[error("BLEU target {target} is unreachable for K = {k} (asymptote {asymptote})")]
    InfeasibleTarget { k: u32, target: f64, asymptote: f64 },

    #[error("logistic fit failed: {0}")]
    FitFailure(String),

    #[error("channels are not quasi-degraded for the requested targets")]
    NotQuasiDegraded,

    #[error("bandwidth floor {required} Hz exceeds the budget {available} Hz")]
    InfeasibleBandwidth { required: f64, available: f64 },

    #[error("no symbol factor satisfies the bandwidth and BLEU screens")]
    NoFeasibleK,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("grid oracle supports at most 3 clusters, got {0}")]
    UnsupportedDimension(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
