use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The aggregate action rate vanished; no agent wants to act.
    #[error("frozen market: aggregate action rate is {nu} at t={time}")]
    FrozenMarket { nu: f64, time: f64 },

    #[error("diverged at t={time}: {detail}")]
    Diverged { time: f64, detail: String },

    #[error("event budget exceeded: more than {cap} events")]
    EventBudgetExceeded { cap: u64 },

    #[error("moments unavailable: {0}")]
    MomentsUnavailable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Machine-readable category used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => "config",
            Error::InvalidInput(_) => "input",
            Error::FrozenMarket { .. } => "frozen-market",
            Error::Diverged { .. } => "diverged",
            Error::EventBudgetExceeded { .. } => "budget-exceeded",
            Error::MomentsUnavailable(_) => "moments-unavailable",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 config, 3 numerical divergence, 4 budget exceeded.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => 2,
            Error::Diverged { .. } | Error::FrozenMarket { .. } => 3,
            Error::EventBudgetExceeded { .. } => 4,
            _ => 1,
        }
    }
}
