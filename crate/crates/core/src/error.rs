use thiserror::Error;

/// Errors raised anywhere in the model, receiver, and game layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("bracket [{lo}, {hi}] does not enclose a sign change")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("solver exhausted {iterations} iterations")]
    MaxIterations { iterations: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("path delay {delay} outside [0, {bit_interval})")]
    DelayOutOfRange { delay: f64, bit_interval: f64 },

    #[error("user {user} has an all-zero signature")]
    ZeroSignature { user: usize },

    #[error("receive filter is identically zero")]
    ZeroFilter,

    #[error("user {user} transmits with zero power")]
    ZeroPower { user: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scenario redraw limit reached after {attempts} attempts")]
    RedrawLimit { attempts: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
