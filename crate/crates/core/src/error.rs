use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or segment lies outside the domain it is evaluated on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index:?} out of range for dims {dims:?}")]
    Range { index: [usize; 3], dims: [usize; 3] },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Users whose total capacity over every candidate position is below the
    /// minimum rate.
    #[error("infeasible: users {users:?} cannot reach the minimum rate")]
    Infeasible { users: Vec<usize> },

    #[error("empty problem: {0}")]
    EmptyProblem(String),

    #[error("problem size {size} exceeds guard {limit}")]
    Guard { size: usize, limit: usize },

    #[error("linear program: {0}")]
    Lp(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
