use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("outside the two-phase region: {0}")]
    Region(String),
    #[error("parity error: {0}")]
    Parity(String),
    #[error("divisibility error: {0}")]
    Divisibility(String),
    #[error("infeasible magnetization: {0}")]
    Infeasible(String),
    #[error("root bracketing failed: {0}")]
    Bracketing(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("convergence condition violated: {0}")]
    ConvergenceCondition(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
