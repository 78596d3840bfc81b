//! Browser demo state: a synthetic corpus pair and the model trained on it.

use ahlm_core::context::select_spans;
use ahlm_core::corpus::{build_vocab, extract_spans, tokenize_corpus, Document};
use ahlm_core::scoring::oracle_scores;
use ahlm_core::synth::KeyPlacement;
use ahlm_core::{
    grid_search, sliding_window_eval, synth_corpus, train_ngram, Error, EvalConfig, GridSpec, MixtureWeights, Mode,
    NGramCacheModel, Result, SynthConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub synth: SynthConfig,
    pub window: usize,
    pub stride: usize,
    pub j: usize,
    pub span_len: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            synth: SynthConfig {
                n_docs: 6,
                doc_len: 1500,
                vocab_size: 400,
                n_keys: 4,
                key_len: 8,
                key_gap: 600,
                zipf_exponent: 1.0,
                seed: 0,
            },
            window: 256,
            stride: 64,
            j: 64,
            span_len: 8,
        }
    }
}

impl DemoParams {
    fn eval_config(&self, mode: Mode) -> EvalConfig {
        EvalConfig {
            window: self.window,
            stride: self.stride,
            j: self.j,
            span_len: self.span_len,
            span_stride: None,
            mode,
            non_overlap: true,
        }
    }
}

pub struct Demo {
    params: DemoParams,
    lm: NGramCacheModel,
    test: Vec<Document>,
    keys: Vec<Vec<KeyPlacement>>,
}

#[derive(Serialize)]
struct ModeResult {
    mode: Mode,
    perplexity: f64,
    tokens: usize,
}

#[derive(Serialize)]
struct Candidate {
    start: usize,
    score: f64,
    selected: bool,
}

#[derive(Serialize)]
struct WindowView<'a> {
    doc_id: &'a str,
    t: usize,
    ancient_end: usize,
    span_len: usize,
    candidates: Vec<Candidate>,
    /// Planted phrase positions, for drawing under the score curve.
    keys: Vec<usize>,
    key_len: usize,
}

impl Demo {
    /// Generates training and test corpora with consecutive seeds and fits
    /// the n-gram cache model on the training half.
    pub fn new(params: DemoParams) -> Result<Self> {
        params.synth.check_window(params.window)?;
        params.eval_config(Mode::OracleGreedy).validate()?;
        let train = synth_corpus(&params.synth)?;
        let test = synth_corpus(&SynthConfig {
            seed: params.synth.seed.wrapping_add(1),
            ..params.synth.clone()
        })?;
        let vocab = build_vocab(train.docs.iter().chain(&test.docs).map(|d| d.text.as_str()), 1)?;
        let lm = train_ngram(
            &tokenize_corpus(&train.docs, &vocab),
            vocab.size(),
            3,
            MixtureWeights::default(),
        )?;
        Ok(Demo {
            test: tokenize_corpus(&test.docs, &vocab),
            keys: test.keys,
            params,
            lm,
        })
    }

    pub fn params(&self) -> &DemoParams {
        &self.params
    }

    pub fn compare_modes(&self) -> Result<String> {
        let out = [Mode::Baseline, Mode::OverlapOracle, Mode::OracleGreedy]
            .into_iter()
            .map(|mode| {
                let r = sliding_window_eval(&self.lm, &self.test, &self.params.eval_config(mode), None, 1)?;
                Ok(ModeResult {
                    mode,
                    perplexity: r.perplexity,
                    tokens: r.total_tokens,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::to_string(&out)?)
    }

    /// Number of selection windows in document `doc`.
    pub fn window_count(&self, doc: usize) -> usize {
        let p = &self.params;
        self.test
            .get(doc)
            .map(|d| d.len().saturating_sub(p.window).div_ceil(p.stride))
            .unwrap_or(0)
    }

    /// Oracle score of every candidate span for the `index`-th window after
    /// the first.
    pub fn window_scores(&self, doc: usize, index: usize) -> Result<String> {
        let p = &self.params;
        let d = self
            .test
            .get(doc)
            .ok_or_else(|| Error::UnknownDocument(format!("#{doc}")))?;
        if index >= self.window_count(doc) {
            return Err(Error::InvalidConfig(format!("window {index} out of range")));
        }
        let cfg = p.eval_config(Mode::OracleGreedy);
        let (k, t) = (cfg.k(), p.window + index * p.stride);
        let end = (t + p.stride).min(d.len());
        let cands = extract_spans(d, t, k, p.j, p.span_len, cfg.resolved_span_stride())?;
        let prefix = &d.tokens[t - (k - p.j)..t];
        let scored = oracle_scores(&self.lm, &cands, prefix, &d.tokens[t..end])?;
        let chosen: Vec<usize> = select_spans(&scored, p.j, p.span_len, true)
            .iter()
            .map(|s| s.start)
            .collect();
        let view = WindowView {
            doc_id: &d.id,
            t,
            ancient_end: t + p.j - k,
            span_len: p.span_len,
            candidates: scored
                .iter()
                .map(|(c, s)| Candidate {
                    start: c.start,
                    score: *s,
                    selected: chosen.contains(&c.start),
                })
                .collect(),
            keys: self.keys[doc].iter().flat_map(|k| k.positions.iter().copied()).collect(),
            key_len: p.synth.key_len,
        };
        Ok(serde_json::to_string(&view)?)
    }

    pub fn grid(&self, j_values: Vec<usize>, span_values: Vec<usize>) -> Result<String> {
        let spec = GridSpec {
            j_values,
            span_values,
            template: self.params.eval_config(Mode::OracleGreedy),
        };
        Ok(serde_json::to_string(&grid_search(&self.lm, &self.test, &spec, 1)?)?)
    }
}
