use thiserror::Error;

/// Errors raised by the allocation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Param { field: String, reason: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// The executed tests exceeded the daily budget. This means the allocator
    /// contract was broken upstream and the episode must not continue.
    #[error("budget violated on day {day}: {tests} tests executed with budget {budget}")]
    BudgetViolated { day: usize, tests: usize, budget: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Param {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that indicate a broken hard invariant rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, Error::BudgetViolated { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
