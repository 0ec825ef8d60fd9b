use thiserror::Error;

use crate::buffers::BufferError;
use crate::gridworld::{LayoutError, StepError};
use crate::numerics::NumericsError;
use crate::priority::PriorityError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Priority(#[from] PriorityError),
    #[error("non-finite TD error for transition {transition}, goal {goal}")]
    NonFiniteTd { transition: usize, goal: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Compare(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
