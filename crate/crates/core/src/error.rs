use thiserror::Error;

use crate::algorithm::IterateState;
use crate::kernels::KernelError;
use crate::problem::ProblemError;
use crate::schedules::ScheduleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("non-finite {stage} at iteration {iteration}; state: {state:?}")]
    NonFinite {
        iteration: u64,
        stage: &'static str,
        state: Box<IterateState>,
    },
    #[error("perturbed point {theta:?} leaves the sampler domain at iteration {iteration}")]
    OutsideSamplerDomain { iteration: u64, theta: Vec<f64> },
    #[error("direction entries must be +1 or -1")]
    InvalidDirection,
    #[error("number of iterations must be >= 1")]
    NoIterations,
    #[error("checkpoints must be strictly increasing within 1..={n_iters}: {reason}")]
    Checkpoints { n_iters: u64, reason: String },
    #[error("covariate dimension {got} not supported here ({reason})")]
    CovariateDimension { got: usize, reason: &'static str },
    #[error("schedule validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("replication {index} failed: {source}")]
    Replication {
        index: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{0}")]
    Stats(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
