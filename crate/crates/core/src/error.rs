use thiserror::Error;

/// Errors raised by the simulator, policies, training and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("unknown environment `{0}` (expected `pendulum` or `cartpole`)")]
    UnknownEnv(String),
    #[error("invalid environment context: {0}")]
    InvalidContext(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    TrainingDiverged { iteration: usize, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(BenchError::Shape {
            what,
            expected,
            got,
        })
    }
}
