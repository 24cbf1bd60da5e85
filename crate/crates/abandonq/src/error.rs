use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller input outside an operation's domain.
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("state space too large: {states} states exceeds budget {budget}")]
    StateBudget { states: u64, budget: u64 },
    #[error("iterative solve did not converge: residual {residual:e} after {iterations} sweeps")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("coupling inclusion violated at epoch {epoch}: {trace}")]
    CouplingViolation { epoch: u64, trace: String },
    /// A sweep failure, tagged with the grid point that produced it.
    #[error("at {point}: {source}")]
    AtPoint { point: String, source: Box<Error> },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}

impl Error {
    /// True for caller-side mistakes (bad parameters, grids, config files).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_) | Error::Json(_) => true,
            Error::AtPoint { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
