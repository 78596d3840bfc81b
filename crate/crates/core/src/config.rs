//! Run configuration: a TOML file with one section per stage. Every field
//! has a default, so a partial file (or none at all) is valid.

use serde::{Deserialize, Serialize};

use crate::corpus::default_span_stride;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Mode};
use crate::lm::MixtureWeights;
use crate::scoring::PairConfig;
use crate::search::GridSpec;
use crate::selector::{AdamWConfig, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<String>,
    pub eval_corpus: Option<String>,
    pub vocab: Option<String>,
    pub lm: Option<String>,
    pub pairs: Option<String>,
    pub selector: Option<String>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub min_count: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection { min_count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    /// Highest order first.
    pub lambdas: Vec<f64>,
    pub lambda_cache: f64,
    pub alpha: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        let w = MixtureWeights::default();
        LmSection {
            order: w.lambdas.len(),
            lambdas: w.lambdas,
            lambda_cache: w.lambda_cache,
            alpha: w.alpha,
        }
    }
}

impl LmSection {
    pub fn weights(&self) -> MixtureWeights {
        MixtureWeights {
            lambdas: self.lambdas.clone(),
            lambda_cache: self.lambda_cache,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    pub window: usize,
    pub stride: usize,
    pub j: usize,
    pub span_len: usize,
    pub span_stride: Option<usize>,
    pub non_overlap: bool,
    pub mode: Mode,
}

impl Default for ContextSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        ContextSection {
            window: e.window,
            stride: e.stride,
            j: e.j,
            span_len: e.span_len,
            span_stride: e.span_stride,
            non_overlap: e.non_overlap,
            mode: e.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    pub pairs_per_doc: usize,
    pub spans_per_step: usize,
    pub seed: u64,
}

impl Default for PairsSection {
    fn default() -> Self {
        PairsSection {
            pairs_per_doc: 64,
            spans_per_step: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SelectorSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        SelectorSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            hidden: t.hidden,
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            weight_decay: t.optimizer.weight_decay,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub j_values: Vec<usize>,
    pub span_values: Vec<usize>,
}

impl Default for SearchSection {
    fn default() -> Self {
        let g = GridSpec::default();
        SearchSection {
            j_values: g.j_values,
            span_values: g.span_values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workers: usize,
    pub paths: Paths,
    pub vocab: VocabSection,
    pub lm: LmSection,
    pub context: ContextSection,
    pub pairs: PairsSection,
    pub selector: SelectorSection,
    pub search: SearchSection,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workers: 1,
            paths: Paths::default(),
            vocab: VocabSection::default(),
            lm: LmSection::default(),
            context: ContextSection::default(),
            pairs: PairsSection::default(),
            selector: SelectorSection::default(),
            search: SearchSection::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serializes to TOML")
    }

    pub fn eval_config(&self) -> EvalConfig {
        let c = &self.context;
        EvalConfig {
            window: c.window,
            stride: c.stride,
            j: c.j,
            span_len: c.span_len,
            span_stride: c.span_stride,
            mode: c.mode,
            non_overlap: c.non_overlap,
        }
    }

    pub fn pair_config(&self) -> PairConfig {
        let c = &self.context;
        PairConfig {
            k: c.window.saturating_sub(c.stride),
            j: c.j,
            span_len: c.span_len,
            stride: c.stride,
            span_stride: c.span_stride.unwrap_or_else(|| default_span_stride(c.span_len)),
            pairs_per_doc: self.pairs.pairs_per_doc,
            spans_per_step: self.pairs.spans_per_step,
            seed: self.pairs.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.selector;
        TrainConfig {
            epochs: s.epochs,
            batch_size: s.batch_size,
            hidden: s.hidden,
            seed: s.seed,
            optimizer: AdamWConfig {
                lr: s.lr,
                beta1: s.beta1,
                beta2: s.beta2,
                eps: s.eps,
                weight_decay: s.weight_decay,
            },
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            j_values: self.search.j_values.clone(),
            span_values: self.search.span_values.clone(),
            template: self.eval_config(),
        }
    }
}
