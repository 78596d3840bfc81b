//! Likelihood-ratio span scores, training-pair generation and the three
//! oracle selectors (greedy per-span, exact joint, token overlap).

use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{assemble_context, max_spans, select_spans};
use crate::corpus::{check_span_config, extract_spans, Document, SpanCandidate, TokenId};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::util::seed_for;

pub const PAIRS_FORMAT: &str = "ahlm-pairs";
pub const PAIRS_VERSION: u32 = 1;

/// Largest number of subsets the exact oracle will enumerate.
pub const EXACT_ORACLE_LIMIT: u128 = 1_000_000;

/// One selector training record. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub doc_id: String,
    pub t: usize,
    pub span_start: usize,
    pub span_len: usize,
    pub prefix: Vec<TokenId>,
    pub future: Vec<TokenId>,
    pub score: f64,
}

/// `ln p(future | span ∥ prefix) − ln p(future | prefix)`.
pub fn score_pair<M: LanguageModel + ?Sized>(
    lm: &M,
    span: &[TokenId],
    prefix: &[TokenId],
    future: &[TokenId],
) -> Result<f64> {
    let base = lm.seq_logprob(prefix, future)?;
    score_against(lm, span, prefix, future, base)
}

fn score_against<M: LanguageModel + ?Sized>(
    lm: &M,
    span: &[TokenId],
    prefix: &[TokenId],
    future: &[TokenId],
    base: f64,
) -> Result<f64> {
    let mut ctx = Vec::with_capacity(span.len() + prefix.len());
    ctx.extend_from_slice(span);
    ctx.extend_from_slice(prefix);
    Ok(lm.seq_logprob(&ctx, future)? - base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    /// Context budget (tokens before the future window).
    pub k: usize,
    pub j: usize,
    pub span_len: usize,
    /// Future length scored per pair.
    pub stride: usize,
    pub span_stride: usize,
    pub pairs_per_doc: usize,
    pub spans_per_step: usize,
    pub seed: u64,
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        check_span_config(self.j, self.span_len)?;
        if self.span_stride == 0 || self.span_stride > self.span_len {
            return Err(Error::InvalidSpanStride {
                stride: self.span_stride,
                span_len: self.span_len,
            });
        }
        if self.j > self.k {
            return Err(Error::InvalidConfig(format!("j={} exceeds k={}", self.j, self.k)));
        }
        if self.stride == 0 || self.spans_per_step == 0 {
            return Err(Error::InvalidConfig("stride and spans_per_step must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Timesteps with a full context, a full future and at least one span of
    /// ancient history.
    pub fn valid_timesteps(&self, doc_len: usize) -> std::ops::Range<usize> {
        let lo = self.k.max((self.k + self.span_len).saturating_sub(self.j));
        let hi = (doc_len + 1).saturating_sub(self.stride);
        lo..hi.max(lo)
    }
}

fn pairs_for_doc<M: LanguageModel + ?Sized>(
    doc: &Document,
    lm: &M,
    cfg: &PairConfig,
) -> Result<Vec<ScoredPair>> {
    let steps = cfg.valid_timesteps(doc.len());
    if cfg.pairs_per_doc == 0 || steps.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, &doc.id));
    let order = index::sample(&mut rng, steps.len(), steps.len());
    let mut out = Vec::new();
    for offset in order.iter() {
        if out.len() >= cfg.pairs_per_doc {
            break;
        }
        let t = steps.start + offset;
        let candidates = extract_spans(doc, t, cfg.k, cfg.j, cfg.span_len, cfg.span_stride)?;
        let prefix = &doc.tokens[t - cfg.k + cfg.j..t];
        let future = &doc.tokens[t..t + cfg.stride];
        let base = lm.seq_logprob(prefix, future)?;
        let take = cfg
            .spans_per_step
            .min(cfg.pairs_per_doc - out.len())
            .min(candidates.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), take).into_vec();
        picked.sort_unstable();
        for i in picked {
            let span = &candidates[i];
            let score = score_against(lm, &span.tokens, prefix, future, base)?;
            if !score.is_finite() {
                return Err(Error::NonFinite(format!(
                    "score for {}:{} at t={t}",
                    doc.id, span.start
                )));
            }
            out.push(ScoredPair {
                doc_id: doc.id.clone(),
                t,
                span_start: span.start,
                span_len: span.len(),
                prefix: prefix.to_vec(),
                future: future.to_vec(),
                score,
            });
        }
    }
    Ok(out)
}

/// Samples `(span, prefix, future)` triples and scores them. Output is
/// ordered by `(doc_id, t, span_start)` regardless of worker count.
pub fn gen_training_pairs<M: LanguageModel + ?Sized>(
    corpus: &[Document],
    lm: &M,
    cfg: &PairConfig,
    workers: usize,
) -> Result<Vec<ScoredPair>> {
    cfg.validate()?;
    let per_doc = crate::util::map_workers(corpus, workers, |d| pairs_for_doc(d, lm, cfg))?;
    let mut out: Vec<ScoredPair> = per_doc.into_iter().flatten().collect();
    out.sort_by(|a, b| {
        (&a.doc_id, a.t, a.span_start).cmp(&(&b.doc_id, b.t, b.span_start))
    });
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairsHeader {
    format: String,
    version: u32,
    config: PairConfig,
    corpus_hash: String,
    lm_hash: String,
}

pub fn write_pairs(
    pairs: &[ScoredPair],
    cfg: &PairConfig,
    corpus_hash: &str,
    lm_hash: &str,
) -> Result<String> {
    let header = PairsHeader {
        format: PAIRS_FORMAT.into(),
        version: PAIRS_VERSION,
        config: cfg.clone(),
        corpus_hash: corpus_hash.into(),
        lm_hash: lm_hash.into(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for p in pairs {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_pairs(text: &str) -> Result<(PairConfig, Vec<ScoredPair>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "empty pairs file"))?;
    let header: PairsHeader =
        serde_json::from_str(first).map_err(|e| Error::parse(1, e.to_string()))?;
    if header.format != PAIRS_FORMAT || header.version != PAIRS_VERSION {
        return Err(Error::parse(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let pairs = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect::<Result<Vec<ScoredPair>>>()?;
    Ok((header.config, pairs))
}

/// Looks up the pair's span in its document and recomputes the score.
pub fn regenerate_score<M: LanguageModel + ?Sized>(
    lm: &M,
    docs: &HashMap<&str, &Document>,
    pair: &ScoredPair,
) -> Result<f64> {
    let span = pair_span(docs, pair)?;
    score_pair(lm, span, &pair.prefix, &pair.future)
}

pub fn pair_span<'a>(docs: &HashMap<&str, &'a Document>, pair: &ScoredPair) -> Result<&'a [TokenId]> {
    let doc = docs
        .get(pair.doc_id.as_str())
        .ok_or_else(|| Error::UnknownDocument(pair.doc_id.clone()))?;
    doc.tokens
        .get(pair.span_start..pair.span_start + pair.span_len)
        .ok_or_else(|| Error::InvalidConfig(format!("span outside document {}", pair.doc_id)))
}

/// True score of every candidate against the actual future.
pub fn oracle_scores<M: LanguageModel + ?Sized>(
    lm: &M,
    candidates: &[SpanCandidate],
    prefix: &[TokenId],
    future: &[TokenId],
) -> Result<Vec<(SpanCandidate, f64)>> {
    let base = lm.seq_logprob(prefix, future)?;
    candidates
        .iter()
        .map(|c| Ok((c.clone(), score_against(lm, &c.tokens, prefix, future, base)?)))
        .collect()
}

pub fn oracle_select_greedy<M: LanguageModel + ?Sized>(
    lm: &M,
    candidates: &[SpanCandidate],
    prefix: &[TokenId],
    future: &[TokenId],
    j: usize,
    span_len: usize,
    non_overlap: bool,
) -> Result<Vec<SpanCandidate>> {
    let scored = oracle_scores(lm, candidates, prefix, future)?;
    Ok(select_spans(&scored, j, span_len, non_overlap))
}

fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Jointly optimal selection: enumerates every non-overlapping subset of at
/// most `j/ℓ` candidates and keeps the one whose assembly gives the future
/// the highest log-likelihood. Ties go to the subset whose start offsets,
/// read latest first, are lexicographically greatest (the recency rule of
/// [`select_spans`]).
pub fn oracle_select_exact<M: LanguageModel + ?Sized>(
    lm: &M,
    candidates: &[SpanCandidate],
    prefix: &[TokenId],
    future: &[TokenId],
    j: usize,
    span_len: usize,
) -> Result<Vec<SpanCandidate>> {
    let m = max_spans(j, span_len);
    let subsets: u128 = (0..=m.min(candidates.len()))
        .map(|r| binomial(candidates.len(), r))
        .fold(0u128, u128::saturating_add);
    if subsets > EXACT_ORACLE_LIMIT {
        return Err(Error::ExactOracleTooLarge {
            subsets,
            limit: EXACT_ORACLE_LIMIT,
        });
    }
    let mut sorted: Vec<&SpanCandidate> = candidates.iter().collect();
    sorted.sort_by_key(|c| (c.start, c.len()));

    struct Search<'a, M: ?Sized> {
        lm: &'a M,
        sorted: Vec<&'a SpanCandidate>,
        prefix: &'a [TokenId],
        future: &'a [TokenId],
        j: usize,
        m: usize,
        best: Option<(f64, Vec<usize>)>,
    }

    impl<M: LanguageModel + ?Sized> Search<'_, M> {
        fn key(&self, chosen: &[usize]) -> Vec<usize> {
            chosen.iter().rev().map(|&i| self.sorted[i].start).collect()
        }

        fn visit(&mut self, chosen: &mut Vec<usize>, next: usize) -> Result<()> {
            let spans: Vec<SpanCandidate> = chosen.iter().map(|&i| self.sorted[i].clone()).collect();
            let asm = assemble_context(&spans, self.prefix, self.j, self.j + self.prefix.len())?;
            let lp = self.lm.seq_logprob(&asm.assembled, self.future)?;
            let better = match &self.best {
                None => true,
                Some((b, bc)) => lp > *b || (lp == *b && self.key(chosen) > self.key(bc)),
            };
            if better {
                self.best = Some((lp, chosen.clone()));
            }
            if chosen.len() == self.m {
                return Ok(());
            }
            for i in next..self.sorted.len() {
                if chosen.iter().any(|&c| self.sorted[c].overlaps(self.sorted[i])) {
                    continue;
                }
                chosen.push(i);
                self.visit(chosen, i + 1)?;
                chosen.pop();
            }
            Ok(())
        }
    }

    let mut search = Search {
        lm,
        sorted,
        prefix,
        future,
        j,
        m,
        best: None,
    };
    search.visit(&mut Vec::new(), 0)?;
    let (_, chosen) = search.best.expect("empty subset is always visited");
    Ok(chosen.into_iter().map(|i| search.sorted[i].clone()).collect())
}

/// Multiset intersection size between two token sequences.
pub fn overlap_count(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for &t in b {
        *counts.entry(t).or_default() += 1;
    }
    let mut hits = 0;
    for t in a {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits
}

/// Ranks spans by token overlap with the future; needs no language model.
pub fn overlap_oracle(
    candidates: &[SpanCandidate],
    future: &[TokenId],
    j: usize,
    span_len: usize,
    non_overlap: bool,
) -> Vec<SpanCandidate> {
    let scored: Vec<(SpanCandidate, f64)> = candidates
        .iter()
        .map(|c| (c.clone(), overlap_count(&c.tokens, future) as f64))
        .collect();
    select_spans(&scored, j, span_len, non_overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, MixtureWeights, NGramCacheModel};

    fn model(lambda_cache: f64) -> NGramCacheModel {
        let docs = [Document::new("a", vec![1, 2, 3, 1, 2, 3, 1, 2, 4, 5, 1, 2, 3])];
        train_ngram(
            &docs,
            8,
            2,
            MixtureWeights {
                lambdas: vec![0.6, 0.3],
                lambda_cache,
                alpha: 0.1,
            },
        )
        .unwrap()
    }

    fn span(start: usize, tokens: Vec<TokenId>) -> SpanCandidate {
        SpanCandidate {
            doc_id: "d".into(),
            start,
            tokens,
        }
    }

    #[test]
    fn no_cache_means_zero_scores() {
        let m = model(0.0);
        let s = score_pair(&m, &[7, 7, 6], &[1, 2], &[3, 7, 1]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn score_is_difference_of_two_logprobs() {
        let m = model(0.2);
        let prefix = [1, 2, 3];
        let future = [1, 6, 2];
        let direct = score_pair(&m, &prefix, &prefix, &future).unwrap();
        let ctx: Vec<TokenId> = prefix.iter().chain(prefix.iter()).copied().collect();
        let two = m.seq_logprob(&ctx, &future).unwrap() - m.seq_logprob(&prefix, &future).unwrap();
        assert_eq!(direct, two);
    }

    #[test]
    fn hand_evaluated_rare_token_score() {
        // vocab {0,1}; unigram only from "0 0 0 1": q(1) = 1/4, λ1 = 1
        let m = train_ngram(
            &[Document::new("x", vec![0, 0, 0, 1])],
            2,
            1,
            MixtureWeights {
                lambdas: vec![1.0],
                lambda_cache: 0.5,
                alpha: 1.0,
            },
        )
        .unwrap();
        // prefix [0], future [1]
        // without span: cache (0 + 1)/(1 + 2) = 1/3 → p = 0.5/3 + 0.5/4 = 7/24
        // with span [1]: cache (1 + 1)/(2 + 2) = 1/2 → p = 0.25 + 0.125 = 3/8
        let s = score_pair(&m, &[1], &[0], &[1]).unwrap();
        let expect = (3.0f64 / 8.0).ln() - (7.0f64 / 24.0).ln();
        assert!((s - expect).abs() < 1e-15, "{s} vs {expect}");
        assert!(s > 0.0);
    }

    #[test]
    fn greedy_oracle_prefers_span_with_future_token() {
        let m = model(0.3);
        let cands = vec![span(0, vec![1, 2]), span(2, vec![6, 7]), span(4, vec![3, 1])];
        let pick = oracle_select_greedy(&m, &cands, &[1, 2, 3], &[7, 1], 2, 2, true).unwrap();
        assert_eq!(pick, vec![span(2, vec![6, 7])]);
        let single = oracle_select_greedy(&m, &cands[..1], &[1], &[2], 2, 2, true).unwrap();
        assert_eq!(single.len(), 1);
        assert!(oracle_select_greedy(&m, &cands[..1], &[1], &[2], 0, 2, true)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn greedy_oracle_identical_spans_take_most_recent() {
        let m = model(0.3);
        let cands: Vec<_> = (0..6).map(|i| span(i * 2, vec![4, 5])).collect();
        let pick = oracle_select_greedy(&m, &cands, &[1, 2], &[5, 1], 4, 2, true).unwrap();
        let starts: Vec<_> = pick.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![10, 8]);
    }

    #[test]
    fn exact_oracle_basics() {
        let m = model(0.3);
        let empty = oracle_select_exact(&m, &[], &[1, 2], &[3], 4, 2).unwrap();
        assert!(empty.is_empty());
        let cands = vec![span(0, vec![1, 2]), span(2, vec![6, 7]), span(4, vec![3, 1])];
        let exact = oracle_select_exact(&m, &cands, &[1, 2, 3], &[7, 1], 2, 2).unwrap();
        let greedy = oracle_select_greedy(&m, &cands, &[1, 2, 3], &[7, 1], 2, 2, true).unwrap();
        assert_eq!(exact, greedy);
        let many: Vec<_> = (0..2000).map(|i| span(i * 2, vec![1, 2])).collect();
        assert!(matches!(
            oracle_select_exact(&m, &many, &[1], &[2], 8, 2),
            Err(Error::ExactOracleTooLarge { .. })
        ));
    }

    #[test]
    fn exact_oracle_ties_follow_recency() {
        let m = model(0.0);
        let cands: Vec<_> = (0..5).map(|i| span(i * 2, vec![1, 2])).collect();
        let exact = oracle_select_exact(&m, &cands, &[1, 2], &[3], 4, 2).unwrap();
        let starts: Vec<_> = exact.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![6, 8]);
    }

    #[test]
    fn overlap_counts() {
        assert_eq!(overlap_count(&[1, 2, 3], &[1, 2, 3]), 3);
        assert_eq!(overlap_count(&[1, 1, 2], &[1, 2, 2, 9]), 2);
        assert_eq!(overlap_count(&[4, 5], &[1, 2]), 0);
        let cands = vec![span(0, vec![4, 5]), span(3, vec![6, 7])];
        // disjoint: all zero, recency wins
        assert_eq!(overlap_oracle(&cands, &[1, 2], 2, 2, true)[0].start, 3);
        assert_eq!(overlap_oracle(&cands, &[4, 5], 2, 2, true)[0].start, 0);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(6, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(40, 20), 137_846_528_820);
    }
}
