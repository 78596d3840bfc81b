//! Language-model interface and the reference cache-mixture n-gram model.
//!
//! The reference model mixes a Jelinek-Mercer interpolated n-gram estimate
//! with a unigram cache over the whole context window:
//!
//! ```text
//! p(w | c) = λc · (count(w in c) + α) / (|c| + α·|V|)
//!          + (1 − λc) · [ Σ_o λ_o · q_o(w | last o−1 of c) + (1 − Σ λ_o) / |V| ]
//! ```
//!
//! `q_o` is the maximum-likelihood estimate of order `o`; when its history
//! was never observed (or the context is too short) it falls back to
//! `q_{o−1}`, so every component stays a proper distribution. The cache term
//! is what lets tokens far outside the n-gram horizon influence predictions.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::{Document, TokenId};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "ahlm-ngram";
pub const MODEL_VERSION: u32 = 1;

pub trait LanguageModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Maximum `|context| + |target|` accepted by [`LanguageModel::seq_logprob`].
    fn token_budget(&self) -> Option<usize> {
        None
    }

    fn cond_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64>;

    /// `Σ_i ln p(target[i] | context ∥ target[..i])`.
    fn seq_logprob(&self, context: &[TokenId], target: &[TokenId]) -> Result<f64> {
        check_budget(self.token_budget(), context.len() + target.len())?;
        let mut ctx = context.to_vec();
        let mut total = 0.0;
        for &w in target {
            total += self.cond_prob(&ctx, w)?.ln();
            ctx.push(w);
        }
        Ok(total)
    }
}

fn check_budget(budget: Option<usize>, used: usize) -> Result<()> {
    match budget {
        Some(b) if used > b => Err(Error::BudgetExceeded { used, budget: b }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    /// Interpolation weights for orders n, n−1, …, 1.
    pub lambdas: Vec<f64>,
    pub lambda_cache: f64,
    pub alpha: f64,
}

impl Default for MixtureWeights {
    fn default() -> Self {
        MixtureWeights {
            lambdas: vec![0.5, 0.3, 0.2],
            lambda_cache: 0.2,
            alpha: 0.1,
        }
    }
}

impl MixtureWeights {
    pub fn validate(&self, order: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMixtureWeights(m));
        if order == 0 {
            return bad("order must be ≥ 1".into());
        }
        if self.lambdas.len() != order {
            return bad(format!(
                "{} lambdas given for order {order}",
                self.lambdas.len()
            ));
        }
        if self.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad("lambdas must be finite and nonnegative".into());
        }
        let sum: f64 = self.lambdas.iter().sum();
        if sum > 1.0 + 1e-12 {
            return bad(format!("lambdas sum to {sum} > 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda_cache) {
            return bad(format!("lambda_cache {} outside [0, 1]", self.lambda_cache));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha {} must be > 0", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramCacheModel {
    order: usize,
    weights: MixtureWeights,
    vocab_size: usize,
    /// `counts[o-1]`: o-gram → count.
    counts: Vec<HashMap<Vec<TokenId>, u64>>,
    /// `history[o-1]`: (o−1)-gram → number of o-grams it starts (o ≥ 2).
    history: Vec<HashMap<Vec<TokenId>, u64>>,
    unigram_total: u64,
    token_budget: Option<usize>,
}

pub fn train_ngram(
    corpus: &[Document],
    vocab_size: usize,
    order: usize,
    weights: MixtureWeights,
) -> Result<NGramCacheModel> {
    weights.validate(order)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts = vec![HashMap::new(); order];
    for doc in corpus {
        for &id in &doc.tokens {
            if id as usize >= vocab_size {
                return Err(Error::InvalidToken {
                    id,
                    size: vocab_size,
                });
            }
        }
        for o in 1..=order {
            for gram in doc.tokens.windows(o) {
                *counts[o - 1].entry(gram.to_vec()).or_insert(0u64) += 1;
            }
        }
    }
    NGramCacheModel::from_counts(order, weights, vocab_size, counts)
}

impl NGramCacheModel {
    fn from_counts(
        order: usize,
        weights: MixtureWeights,
        vocab_size: usize,
        counts: Vec<HashMap<Vec<TokenId>, u64>>,
    ) -> Result<Self> {
        weights.validate(order)?;
        if vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be ≥ 1".into()));
        }
        let unigram_total: u64 = counts[0].values().sum();
        if unigram_total == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut history = vec![HashMap::new(); order];
        for o in 2..=order {
            for (gram, c) in &counts[o - 1] {
                *history[o - 1].entry(gram[..o - 1].to_vec()).or_insert(0u64) += c;
            }
        }
        Ok(NGramCacheModel {
            order,
            weights,
            vocab_size,
            counts,
            history,
            unigram_total,
            token_budget: None,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self) -> &MixtureWeights {
        &self.weights
    }

    pub fn count(&self, gram: &[TokenId]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        self.counts[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    pub fn with_token_budget(mut self, budget: Option<usize>) -> Self {
        self.token_budget = budget;
        self
    }

    /// Same counts, different mixture weights.
    pub fn with_weights(&self, weights: MixtureWeights) -> Result<Self> {
        weights.validate(self.order)?;
        let mut m = self.clone();
        m.weights = weights;
        Ok(m)
    }

    fn check_token(&self, id: TokenId) -> Result<()> {
        if id as usize >= self.vocab_size {
            return Err(Error::InvalidToken {
                id,
                size: self.vocab_size,
            });
        }
        Ok(())
    }

    /// Interpolated n-gram probability given the most recent tokens.
    pub fn ngram_prob(&self, context: &[TokenId], w: TokenId) -> f64 {
        let v = self.vocab_size as f64;
        let n = self.order;
        let uni = self.counts[0].get(&[w][..]).copied().unwrap_or(0) as f64
            / self.unigram_total as f64;
        let mut q = uni;
        let mut p = self.weights.lambdas[n - 1] * q;
        let mut gram: Vec<TokenId> = Vec::with_capacity(n);
        for o in 2..=n {
            if context.len() >= o - 1 {
                let h = &context[context.len() - (o - 1)..];
                if let Some(&tot) = self.history[o - 1].get(h) {
                    gram.clear();
                    gram.extend_from_slice(h);
                    gram.push(w);
                    let c = self.counts[o - 1].get(&gram).copied().unwrap_or(0);
                    q = c as f64 / tot as f64;
                }
            }
            p += self.weights.lambdas[n - o] * q;
        }
        let floor = 1.0 - self.weights.lambdas.iter().sum::<f64>();
        p + floor.max(0.0) / v
    }

    fn cache_prob(&self, count_in_ctx: u64, ctx_len: usize) -> f64 {
        let a = self.weights.alpha;
        (count_in_ctx as f64 + a) / (ctx_len as f64 + a * self.vocab_size as f64)
    }

    fn mix(&self, cache: f64, ngram: f64) -> f64 {
        let lc = self.weights.lambda_cache;
        lc * cache + (1.0 - lc) * ngram
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |xs: &[f64]| {
            xs.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "{MODEL_FORMAT}\t{MODEL_VERSION}");
        let _ = writeln!(out, "order\t{}", self.order);
        let _ = writeln!(out, "lambdas\t{}", join(&self.weights.lambdas));
        let _ = writeln!(out, "lambda_cache\t{:?}", self.weights.lambda_cache);
        let _ = writeln!(out, "alpha\t{:?}", self.weights.alpha);
        let _ = writeln!(out, "vocab_size\t{}", self.vocab_size);
        for table in &self.counts {
            let mut rows: Vec<(&Vec<TokenId>, &u64)> = table.iter().collect();
            rows.sort();
            for (gram, c) in rows {
                let ids: Vec<String> = gram.iter().map(|i| i.to_string()).collect();
                let _ = writeln!(out, "{}\t{c}", ids.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String> {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing header {key}")))?;
            match line.split_once('\t') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(Error::parse(i + 1, format!("expected header {key}"))),
            }
        };
        let version = header(MODEL_FORMAT)?;
        if version != MODEL_VERSION.to_string() {
            return Err(Error::parse(1, format!("unsupported version {version}")));
        }
        let num = |s: &str, line: usize| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("bad number {s:?}")))
        };
        let order: usize = header("order")?
            .parse()
            .map_err(|_| Error::parse(2, "bad order"))?;
        let lambdas = header("lambdas")?
            .split_whitespace()
            .map(|s| num(s, 3))
            .collect::<Result<Vec<_>>>()?;
        let lambda_cache = num(&header("lambda_cache")?, 4)?;
        let alpha = num(&header("alpha")?, 5)?;
        let vocab_size: usize = header("vocab_size")?
            .parse()
            .map_err(|_| Error::parse(6, "bad vocab_size"))?;
        let weights = MixtureWeights {
            lambdas,
            lambda_cache,
            alpha,
        };
        weights.validate(order)?;
        let mut counts = vec![HashMap::new(); order];
        for (i, line) in lines {
            let (gram, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected ngram<TAB>count"))?;
            let gram: Vec<TokenId> = gram
                .split(' ')
                .map(|s| s.parse::<TokenId>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(i + 1, "bad ngram ids"))?;
            let c: u64 = c.parse().map_err(|_| Error::parse(i + 1, "bad count"))?;
            if gram.is_empty() || gram.len() > order {
                return Err(Error::parse(i + 1, "ngram length outside 1..=order"));
            }
            if let Some(&id) = gram.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::InvalidToken {
                    id,
                    size: vocab_size,
                });
            }
            counts[gram.len() - 1].insert(gram, c);
        }
        Self::from_counts(order, weights, vocab_size, counts)
    }
}

impl LanguageModel for NGramCacheModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn token_budget(&self) -> Option<usize> {
        self.token_budget
    }

    fn cond_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64> {
        self.check_token(token)?;
        let mut hits = 0u64;
        for &c in context {
            self.check_token(c)?;
            hits += u64::from(c == token);
        }
        let cache = self.cache_prob(hits, context.len());
        Ok(self.mix(cache, self.ngram_prob(context, token)))
    }

    fn seq_logprob(&self, context: &[TokenId], target: &[TokenId]) -> Result<f64> {
        check_budget(self.token_budget, context.len() + target.len())?;
        if target.is_empty() {
            return Ok(0.0);
        }
        let mut cache: HashMap<TokenId, u64> = HashMap::with_capacity(context.len() + target.len());
        for &c in context {
            self.check_token(c)?;
            *cache.entry(c).or_insert(0) += 1;
        }
        let tail_len = context.len().min(self.order - 1);
        let mut window: Vec<TokenId> = context[context.len() - tail_len..].to_vec();
        window.extend_from_slice(target);
        let mut total = 0.0;
        for (i, &w) in target.iter().enumerate() {
            self.check_token(w)?;
            let ctx_len = context.len() + i;
            let hits = cache.get(&w).copied().unwrap_or(0);
            let recent = &window[..tail_len + i];
            let p = self.mix(self.cache_prob(hits, ctx_len), self.ngram_prob(recent, w));
            total += p.ln();
            *cache.entry(w).or_insert(0) += 1;
        }
        Ok(total)
    }
}

/// exp(mean negative log-likelihood).
pub fn perplexity(total_nll: f64, tokens: usize) -> f64 {
    if tokens == 0 {
        return f64::NAN;
    }
    (total_nll / tokens as f64).exp()
}
