use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("topology is not symmetric: edge {0}->{1} has no reverse")]
    NotSymmetric(usize, usize),
    #[error("topology is not strongly connected")]
    NotConnected,
    #[error("matrix is not primitive")]
    NotPrimitive,
    #[error("combination matrix column {col} sums to {sum}, expected 1")]
    NotStochastic { col: usize, sum: f64 },
    #[error("matrix support does not match topology at ({0},{1})")]
    SupportMismatch(usize, usize),
    #[error("Perron iteration did not converge within {0} iterations")]
    PerronDiverged(usize),
    #[error("likelihood row for agent {agent}, hypothesis {hypothesis} is not a pmf (sum {sum})")]
    NotPmf { agent: usize, hypothesis: usize, sum: f64 },
    #[error(
        "infinite KL divergence: agent {agent} row {truth} has support outside row {other} \
         (violates finite-informativeness)"
    )]
    InfiniteKl { agent: usize, truth: usize, other: usize },
    #[error("trend distribution sums to {0}, expected 1")]
    TrendNotPmf(f64),
    #[error("observation impossible under every hypothesis for agent {agent} at time {time}")]
    ImpossibleObservation { agent: usize, time: u64 },
    #[error("belief entry outside (0,1): {0}")]
    BeliefOutOfRange(f64),
    #[error("step failed for agent {agent} at time {time}: {source}")]
    Step { agent: usize, time: u64, source: Box<Error> },
    #[error("config validation failed:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
