use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("schedule ordering error: {0}")]
    Ordering(String),

    #[error("schedule composition error: junction {last_first} -> {first_second} is increasing")]
    Composition { last_first: f64, first_second: f64 },

    #[error("log-SNR undefined at transition {index}: terminal sigma is zero")]
    UndefinedLogSnr { index: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("latent contains non-finite values")]
    NonFinite,

    #[error("insufficient epsilon history: need {needed}, have {available}")]
    History { needed: usize, available: usize },

    #[error("history step index {new} does not follow {last}")]
    HistoryOrder { last: usize, new: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("cannot parse skip token {token:?}")]
    Parse { token: String },

    #[error("scripted denoiser exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },

    #[error("numeric divergence at step {step}")]
    NumericDivergence { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
