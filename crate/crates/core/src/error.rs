use alloc::string::String;

/// Errors produced by the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Retryable failure talking to a provider or encoder.
    #[error("transport error: {0}")]
    Transport(String),
    /// The remote side answered with something we could not interpret.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no parseable gradient blocks ({warnings} malformed)")]
    EmptyGradient { warnings: usize },
    #[error("could not parse fusion output: {0}")]
    FusionParse(String),
    #[error("prediction unavailable: {0}")]
    PredictionUnavailable(String),
    #[error("reward unavailable: {0}")]
    RewardUnavailable(String),
    #[error("iteration failed: {0}")]
    Iteration(String),
    #[error("simulation diverged at step {step}")]
    Simulation { step: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
