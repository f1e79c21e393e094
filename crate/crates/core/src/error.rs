use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Every log-weight in a selection was -inf.
    #[error("degenerate weights: every candidate has zero weight")]
    DegenerateWeights,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("cost guard: p = {p} exceeds the configured cap of {cap}")]
    CostGuard { p: usize, cap: usize },

    #[error("grid oracle did not converge: {0}")]
    NotConverged(String),

    #[error("importance pool degenerate: max normalized weight {max_weight:.3} exceeds {limit}")]
    EffectiveSample { max_weight: f64, limit: f64 },

    #[error("at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
