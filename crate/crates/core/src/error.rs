use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid (j, ℓ): j={j}, ℓ={span_len} (need 1 ≤ ℓ ≤ j and j mod ℓ = 0)")]
    InvalidSpanConfig { j: usize, span_len: usize },

    #[error("invalid span stride {stride} for ℓ={span_len} (need 1 ≤ stride ≤ ℓ)")]
    InvalidSpanStride { stride: usize, span_len: usize },

    #[error("invalid mixture weights: {0}")]
    InvalidMixtureWeights(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidToken { id: u32, size: usize },

    #[error("context budget exceeded: {used} tokens > {budget}")]
    BudgetExceeded { used: usize, budget: usize },

    #[error("selected content exceeds j: {selected} > {j}")]
    SelectionOverBudget { selected: usize, j: usize },

    #[error("prefix too long: {len} > k - j = {max}")]
    PrefixTooLong { len: usize, max: usize },

    #[error("exact oracle too large: {subsets} subsets exceed the limit of {limit}")]
    ExactOracleTooLarge { subsets: u128, limit: u128 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("mode {0} requires a trained selector")]
    MissingSelector(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty valid grid: every (j, ℓ) pair was rejected")]
    EmptyGrid,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown document {0}")]
    UnknownDocument(String),

    /// A failure attributed to one named input of a pipeline stage.
    #[error("{name}: {source}")]
    Input { name: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn input(self, name: &str) -> Self {
        Error::Input {
            name: name.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for this failure: 1 usage, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input { source, .. } => source.exit_code(),
            Error::NonFinite(_) => 3,
            Error::InvalidSpanConfig { .. }
            | Error::InvalidSpanStride { .. }
            | Error::InvalidMixtureWeights(_)
            | Error::InvalidConfig(_)
            | Error::MissingSelector(_)
            | Error::EmptyGrid => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
