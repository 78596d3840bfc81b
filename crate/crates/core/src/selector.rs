//! The auxiliary span scorer: eight hand-built (span, prefix) features fed to
//! a two-layer ReLU network, trained by MSE regression on likelihood-ratio
//! scores with AdamW.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, TokenId};
use crate::error::{Error, Result};
use crate::scoring::{pair_span, ScoredPair};

pub const FEATURE_DIM: usize = 8;
pub const FEATURE_SPEC_VERSION: u32 = 1;
pub const SELECTOR_FORMAT: &str = "ahlm-selector";
pub const SELECTOR_VERSION: u32 = 1;

/// Rare-token feature saturates at this many tokens.
const RARE_CAP: usize = 5;

/// Corpus statistics the features are computed against.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabStats {
    pub n_docs: u64,
    pub total_tokens: u64,
    pub doc_freq: Vec<u64>,
    pub counts: Vec<u64>,
}

impl VocabStats {
    pub fn from_corpus(corpus: &[Document], vocab_size: usize) -> Self {
        let mut doc_freq = vec![0u64; vocab_size];
        let mut counts = vec![0u64; vocab_size];
        for doc in corpus {
            let mut seen = HashSet::new();
            for &t in &doc.tokens {
                if let Some(c) = counts.get_mut(t as usize) {
                    *c += 1;
                    if seen.insert(t) {
                        doc_freq[t as usize] += 1;
                    }
                }
            }
        }
        VocabStats {
            n_docs: corpus.len() as u64,
            total_tokens: counts.iter().sum(),
            doc_freq,
            counts,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    fn df(&self, t: TokenId) -> u64 {
        self.doc_freq.get(t as usize).copied().unwrap_or(0)
    }

    /// `ln(N_docs / df)`; unseen tokens are treated as df = 1.
    pub fn idf(&self, t: TokenId) -> f64 {
        (self.n_docs.max(1) as f64 / self.df(t).max(1) as f64).ln()
    }

    /// Add-one smoothed unigram surprisal in nats.
    pub fn surprisal(&self, t: TokenId) -> f64 {
        let c = self.counts.get(t as usize).copied().unwrap_or(0);
        -((c as f64 + 1.0) / (self.total_tokens as f64 + self.vocab_size() as f64)).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-window lookup tables over the necessary prefix, shared by all
/// candidate spans of that window.
#[derive(Debug, Clone)]
pub struct PrefixIndex<'a> {
    prefix: &'a [TokenId],
    counts: HashMap<TokenId, usize>,
    positions: HashMap<TokenId, Vec<usize>>,
}

impl<'a> PrefixIndex<'a> {
    pub fn new(prefix: &'a [TokenId]) -> Self {
        let mut counts: HashMap<TokenId, usize> = HashMap::new();
        let mut positions: HashMap<TokenId, Vec<usize>> = HashMap::new();
        for (i, &t) in prefix.iter().enumerate() {
            *counts.entry(t).or_default() += 1;
            positions.entry(t).or_default().push(i);
        }
        PrefixIndex {
            prefix,
            counts,
            positions,
        }
    }

    /// Longest contiguous run shared by `span` and the prefix.
    fn longest_match(&self, span: &[TokenId]) -> usize {
        let mut best = 0;
        for (i, t) in span.iter().enumerate() {
            let Some(ps) = self.positions.get(t) else {
                continue;
            };
            for &p in ps {
                let run = span[i..]
                    .iter()
                    .zip(&self.prefix[p..])
                    .take_while(|(a, b)| a == b)
                    .count();
                best = best.max(run);
            }
        }
        best
    }
}

/// Features, in order:
/// 1. fraction of span tokens present in the prefix
/// 2. fraction of prefix tokens present in the span
/// 3. idf mass of the shared token types over the span's idf mass
/// 4. distance from span start to `t`, as a fraction of `t`
/// 5. mean unigram surprisal of the span, over `ln |V|`
/// 6. tokens with document frequency ≤ 1, capped at 5, over 5
/// 7. longest contiguous span/prefix match, over the span length
/// 8. constant 1
pub fn featurize_with(
    span: &[TokenId],
    span_start: usize,
    t: usize,
    prefix: &PrefixIndex<'_>,
    stats: &VocabStats,
) -> FeatureVector {
    let len = span.len().max(1) as f64;
    let span_types: HashSet<TokenId> = span.iter().copied().collect();

    let in_prefix = span.iter().filter(|t| prefix.counts.contains_key(t)).count() as f64 / len;

    let covered: usize = span_types
        .iter()
        .filter_map(|t| prefix.counts.get(t))
        .sum();
    let prefix_frac = if prefix.prefix.is_empty() {
        0.0
    } else {
        covered as f64 / prefix.prefix.len() as f64
    };

    let (mut shared_idf, mut span_idf) = (0.0, 0.0);
    let mut types: Vec<TokenId> = span_types.iter().copied().collect();
    types.sort_unstable();
    for ty in types {
        let w = stats.idf(ty);
        span_idf += w;
        if prefix.counts.contains_key(&ty) {
            shared_idf += w;
        }
    }
    let idf_overlap = if span_idf > 0.0 { shared_idf / span_idf } else { 0.0 };

    let distance = if t > 0 {
        t.saturating_sub(span_start) as f64 / t as f64
    } else {
        0.0
    };

    let log_v = (stats.vocab_size().max(2) as f64).ln();
    let surprisal = span.iter().map(|&w| stats.surprisal(w)).sum::<f64>() / len / log_v;

    let rare = span.iter().filter(|&&w| stats.df(w) <= 1).count().min(RARE_CAP) as f64
        / RARE_CAP as f64;

    let run = prefix.longest_match(span) as f64 / len;

    FeatureVector([
        in_prefix,
        prefix_frac,
        idf_overlap,
        distance,
        surprisal,
        rare,
        run,
        1.0,
    ])
}

pub fn featurize(
    span: &[TokenId],
    span_start: usize,
    t: usize,
    prefix: &[TokenId],
    stats: &VocabStats,
) -> FeatureVector {
    featurize_with(span, span_start, t, &PrefixIndex::new(prefix), stats)
}

/// Two-layer regression head `w2ᵀ·relu(w1ᵀx + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorModel {
    pub input_dim: usize,
    pub hidden: usize,
    /// Row-major `input_dim × hidden`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }

    pub fn zeros_like(model: &SelectorModel) -> Self {
        Gradients {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: 0.0,
        }
    }
}

impl SelectorModel {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        SelectorModel {
            input_dim,
            hidden,
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(input_dim, hidden);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        for w in &mut m.w1 {
            *w = rng.random_range(-a1..=a1);
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut m.w2 {
            *w = rng.random_range(-a2..=a2);
        }
        m
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn check_shapes(&self) -> Result<()> {
        if self.w1.len() != self.input_dim * self.hidden
            || self.b1.len() != self.hidden
            || self.w2.len() != self.hidden
        {
            return Err(Error::ShapeMismatch(format!(
                "parameters do not match {}×{}",
                self.input_dim, self.hidden
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w1[i * self.hidden..(i + 1) * self.hidden];
            for (zj, wij) in z.iter_mut().zip(row) {
                *zj += xi * wij;
            }
        }
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_shapes()?;
        self.check_input(x)?;
        let z = self.hidden_pre(x);
        Ok(z.iter()
            .zip(&self.w2)
            .map(|(zj, w)| zj.max(0.0) * w)
            .sum::<f64>()
            + self.b2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

pub fn mse_loss(model: &SelectorModel, batch: &[Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for e in batch {
        let d = model.forward(&e.x)? - e.y;
        total += d * d;
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`mse_loss`]. The ReLU derivative at 0 is taken as 0.
pub fn grad(model: &SelectorModel, batch: &[Example]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    model.check_shapes()?;
    let h = model.hidden;
    let scale = 2.0 / batch.len() as f64;
    let mut g = Gradients::zeros_like(model);
    for e in batch {
        model.check_input(&e.x)?;
        let z = model.hidden_pre(&e.x);
        let pred: f64 = z.iter().zip(&model.w2).map(|(zj, w)| zj.max(0.0) * w).sum::<f64>() + model.b2;
        let dpred = scale * (pred - e.y);
        g.b2 += dpred;
        for j in 0..h {
            if z[j] > 0.0 {
                g.w2[j] += dpred * z[j];
                let dz = dpred * model.w2[j];
                g.b1[j] += dz;
                for (i, &xi) in e.x.iter().enumerate() {
                    g.w1[i * h + j] += xi * dz;
                }
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(model: &SelectorModel, config: AdamWConfig) -> Self {
        let zeros = |n: usize| vec![0.0; n];
        let shapes = [model.w1.len(), model.b1.len(), model.w2.len(), 1];
        AdamWState {
            config,
            step: 0,
            m: shapes.iter().map(|&n| zeros(n)).collect(),
            v: shapes.iter().map(|&n| zeros(n)).collect(),
        }
    }
}

/// One decoupled-weight-decay Adam update, in place.
pub fn adamw_step(model: &mut SelectorModel, grads: &Gradients, state: &mut AdamWState) -> Result<()> {
    let gs = grads.slices();
    {
        let ps = model.param_slices_mut();
        for (i, (p, g)) in ps.iter().zip(gs.iter()).enumerate() {
            if p.len() != g.len() || state.m[i].len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter block {i}: {} params, {} grads, {} moments",
                    p.len(),
                    g.len(),
                    state.m[i].len()
                )));
            }
        }
    }
    let c = state.config;
    state.step += 1;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    let ps = model.param_slices_mut();
    for (i, (p, g)) in ps.into_iter().zip(gs).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for idx in 0..p.len() {
            p[idx] -= c.lr * c.weight_decay * p[idx];
            m[idx] = c.beta1 * m[idx] + (1.0 - c.beta1) * g[idx];
            v[idx] = c.beta2 * v[idx] + (1.0 - c.beta2) * g[idx] * g[idx];
            let m_hat = m[idx] / bc1;
            let v_hat = v[idx] / bc2;
            p[idx] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            hidden: 32,
            seed: 0,
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: SelectorModel,
    /// Full-dataset MSE after each epoch.
    pub loss_trace: Vec<f64>,
}

fn cmp_examples(a: &Example, b: &Example) -> Ordering {
    a.x.iter()
        .zip(&b.x)
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.x.len().cmp(&b.x.len()))
        .then_with(|| a.y.total_cmp(&b.y))
}

/// Minibatch AdamW regression. Examples are put in a canonical order before
/// the seeded per-epoch shuffles, so the result does not depend on the order
/// they were supplied in.
pub fn train_regressor(examples: &[Example], cfg: &TrainConfig) -> Result<TrainedModel> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidConfig("batch_size and hidden must be ≥ 1".into()));
    }
    let dim = examples[0].x.len();
    let mut data = examples.to_vec();
    data.sort_by(cmp_examples);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SelectorModel::init(dim, cfg.hidden, &mut rng);
    let mut state = AdamWState::new(&model, cfg.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let g = grad(&model, &batch)?;
            adamw_step(&mut model, &g, &mut state)?;
        }
        let loss = mse_loss(&model, &data)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        loss_trace.push(loss);
    }
    Ok(TrainedModel { model, loss_trace })
}

/// A trained scorer bundled with the corpus statistics its features use.
#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub model: SelectorModel,
    pub stats: VocabStats,
    pub train: TrainConfig,
    pub loss_trace: Vec<f64>,
}

pub fn pair_examples(
    pairs: &[ScoredPair],
    corpus: &[Document],
    stats: &VocabStats,
) -> Result<Vec<Example>> {
    let docs: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    pairs
        .iter()
        .map(|p| {
            let span = pair_span(&docs, p)?;
            let x = featurize(span, p.span_start, p.t, &p.prefix, stats);
            Ok(Example {
                x: x.0.to_vec(),
                y: p.score,
            })
        })
        .collect()
}

pub fn train_selector(
    pairs: &[ScoredPair],
    corpus: &[Document],
    stats: VocabStats,
    cfg: &TrainConfig,
) -> Result<Selector> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let examples = pair_examples(pairs, corpus, &stats)?;
    let trained = train_regressor(&examples, cfg)?;
    Ok(Selector {
        model: trained.model,
        stats,
        train: cfg.clone(),
        loss_trace: trained.loss_trace,
    })
}

impl Selector {
    pub fn predict(&self, span: &[TokenId], span_start: usize, t: usize, prefix: &[TokenId]) -> Result<f64> {
        self.predict_with(span, span_start, t, &PrefixIndex::new(prefix))
    }

    pub fn predict_with(
        &self,
        span: &[TokenId],
        span_start: usize,
        t: usize,
        prefix: &PrefixIndex<'_>,
    ) -> Result<f64> {
        let x = featurize_with(span, span_start, t, prefix, &self.stats);
        self.model.forward(x.as_slice())
    }

    pub fn to_text(&self) -> Result<String> {
        fn row(out: &mut String, key: &str, xs: &[f64]) {
            let vals: Vec<String> = xs.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(out, "{key}\t{}", vals.join(" "));
        }
        fn urow(out: &mut String, key: &str, xs: &[u64]) {
            let vals: Vec<String> = xs.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{key}\t{}", vals.join(" "));
        }
        let m = &self.model;
        let mut out = String::new();
        let _ = writeln!(out, "{SELECTOR_FORMAT}\t{SELECTOR_VERSION}");
        let _ = writeln!(out, "feature_spec\t{FEATURE_SPEC_VERSION}");
        let _ = writeln!(out, "dims\t{} {}", m.input_dim, m.hidden);
        let _ = writeln!(out, "train\t{}", serde_json::to_string(&self.train)?);
        row(&mut out, "loss_trace", &self.loss_trace);
        row(&mut out, "w1", &m.w1);
        row(&mut out, "b1", &m.b1);
        row(&mut out, "w2", &m.w2);
        row(&mut out, "b2", &[m.b2]);
        let _ = writeln!(out, "stats\t{} {}", self.stats.n_docs, self.stats.total_tokens);
        urow(&mut out, "doc_freq", &self.stats.doc_freq);
        urow(&mut out, "counts", &self.stats.counts);
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once('\t').unwrap_or((line, ""));
            fields.insert(k, (i + 1, v));
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(0, format!("missing field {k}")))
        };
        let floats = |k: &str| -> Result<Vec<f64>> {
            let (line, v) = get(k)?;
            v.split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse(line, format!("bad number in {k}"))))
                .collect()
        };
        let ints = |k: &str| -> Result<Vec<u64>> {
            let (line, v) = get(k)?;
            v.split_whitespace()
                .map(|s| s.parse::<u64>().map_err(|_| Error::parse(line, format!("bad integer in {k}"))))
                .collect()
        };
        let (_, version) = get(SELECTOR_FORMAT)?;
        if version != SELECTOR_VERSION.to_string() {
            return Err(Error::parse(1, format!("unsupported selector version {version}")));
        }
        let (line, spec) = get("feature_spec")?;
        if spec != FEATURE_SPEC_VERSION.to_string() {
            return Err(Error::parse(line, format!("unsupported feature spec {spec}")));
        }
        let dims = ints("dims")?;
        let [input_dim, hidden] = dims[..] else {
            return Err(Error::parse(get("dims")?.0, "dims needs two values"));
        };
        let (line, train) = get("train")?;
        let train: TrainConfig =
            serde_json::from_str(train).map_err(|e| Error::parse(line, e.to_string()))?;
        let b2 = floats("b2")?;
        let model = SelectorModel {
            input_dim: input_dim as usize,
            hidden: hidden as usize,
            w1: floats("w1")?,
            b1: floats("b1")?,
            w2: floats("w2")?,
            b2: *b2.first().ok_or_else(|| Error::parse(0, "empty b2"))?,
        };
        model.check_shapes()?;
        let st = ints("stats")?;
        let [n_docs, total_tokens] = st[..] else {
            return Err(Error::parse(get("stats")?.0, "stats needs two values"));
        };
        let stats = VocabStats {
            n_docs,
            total_tokens,
            doc_freq: ints("doc_freq")?,
            counts: ints("counts")?,
        };
        if stats.doc_freq.len() != stats.counts.len() {
            return Err(Error::ShapeMismatch("doc_freq and counts lengths differ".into()));
        }
        Ok(Selector {
            model,
            stats,
            train,
            loss_trace: floats("loss_trace")?,
        })
    }
}
