use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("percolation cluster too small ({size} of {volume} sites open-connected); retry with another seed or larger p_open")]
    PercolationTooSmall { size: usize, volume: usize },
    #[error("invalid site-weights: {0}")]
    InvalidWeights(String),
    #[error("state space of size {count} exceeds cap {cap}")]
    SizeLimit { count: u128, cap: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chain is not reversible: max detailed-balance residual {residual:e}")]
    NotReversible { residual: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("coupling requires per-particle Bernoulli draws: {0}")]
    Coupling(String),
    #[error("nash fit needs at least 4 usable grid points, found {0}")]
    InsufficientWindow(usize),
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
