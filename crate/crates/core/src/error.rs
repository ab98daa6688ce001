use thiserror::Error;

use crate::game_lp::GameSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("problem has no constraint cost/bound but the operation needs one")]
    MissingConstraint,

    #[error("{what} did not converge after {iterations} iterations (last estimate {last})")]
    NonConvergence { what: &'static str, iterations: usize, last: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("constraint generation stopped after {rounds} rounds with violation {max_violation:.3e} outstanding")]
    GenerationIncomplete { rounds: usize, max_violation: f64, best: Box<GameSolution> },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse(_) | Error::Validation(_) | Error::MissingConstraint => 2,
            Error::NonConvergence { .. } | Error::Numeric(_) | Error::GenerationIncomplete { .. } => 3,
            Error::Guard(_) => 4,
        }
    }
}
