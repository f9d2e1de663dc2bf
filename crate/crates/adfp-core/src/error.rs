//! Crate-wide error type. Validation errors carry the offending field or
//! value so callers can surface actionable diagnostics.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gamma = {0} is out of range: must lie strictly between 0 and 1")]
    InvalidGamma(f64),
    #[error("vocabulary size {0} too small: need at least 2 tokens")]
    VocabTooSmall(usize),
    #[error("green list would be empty: floor(gamma * vocab_size) = 0 for gamma = {gamma}, vocab_size = {vocab_size}")]
    EmptyGreenList { gamma: f64, vocab_size: usize },
    #[error("empty context window: the hash window needs at least one token")]
    EmptyWindow,
    #[error("green list invalid: {0}")]
    InvalidGreenList(String),
    #[error("token id {token} out of vocabulary (size {vocab_size})")]
    TokenOutOfVocab { token: u32, vocab_size: usize },
    #[error("symbol {symbol} outside base alphabet (size {alphabet_size})")]
    UnknownSymbol { symbol: u32, alphabet_size: usize },
    #[error("vector length {got} does not match vocabulary size {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("temperature tau = {0} invalid: must be finite and > 0")]
    InvalidTemperature(f64),
    #[error("top_p = {0} invalid: must lie in (0, 1]")]
    InvalidTopP(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("probability vector invalid: {0}")]
    InvalidProbVector(String),
    #[error("hidden width {0} invalid: mlp models need hidden >= 1")]
    InvalidHidden(usize),
    #[error("context order {0} invalid: must be >= 1")]
    InvalidContextOrder(usize),
    #[error("empty corpus: need at least one trace with at least one token")]
    EmptyCorpus,
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },
    #[error("model too large for the exact oracle: vocab {vocab_size} exceeds limit {limit}")]
    ModelTooLarge { vocab_size: usize, limit: usize },
    #[error("method {method} requires a proxy model")]
    ProxyRequired { method: &'static str },
    #[error("evaluation dataset is empty: no context survived boundary alignment and deduplication")]
    EmptyEvalSet,
    #[error("evaluation dataset invalid: {0}")]
    InvalidEvalSet(String),
    #[error("invalid value for {field}: {message}")]
    Config { field: String, message: String },
    #[error("roc experiment needs both classes: {0}")]
    RocClasses(String),
    #[error("checkpoint malformed: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that indicate bad configuration or inputs rather
    /// than a failure while running; the CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGamma(_)
                | Error::VocabTooSmall(_)
                | Error::EmptyGreenList { .. }
                | Error::InvalidTemperature(_)
                | Error::InvalidTopP(_)
                | Error::InvalidHidden(_)
                | Error::InvalidContextOrder(_)
                | Error::Config { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
