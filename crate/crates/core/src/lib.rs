//! Ancient-history context selection for language models.
//!
//! A language model with a fixed context budget `k` normally sees only the
//! most recent `k` tokens. Here the first `j` positions of that window can
//! instead hold spans of length `ℓ` chosen from earlier in the document,
//! ranked by a true-future oracle, a token-overlap heuristic or a trained
//! feature selector.

pub mod config;
pub mod context;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod scoring;
pub mod search;
pub mod selector;
pub mod synth;
pub mod util;

pub use config::RunConfig;
pub use context::{assemble_context, select_spans, ContextAssembly};
pub use corpus::{Document, SpanCandidate, TokenId, Vocab};
pub use error::{Error, Result};
pub use eval::{sliding_window_eval, EvalConfig, EvalReport, Mode};
pub use lm::{train_ngram, LanguageModel, MixtureWeights, NGramCacheModel};
pub use scoring::{gen_training_pairs, score_pair, PairConfig, ScoredPair};
pub use search::{grid_search, GridResult, GridSpec};
pub use selector::{train_selector, Selector, TrainConfig};
pub use synth::{synth_corpus, SynthConfig};
