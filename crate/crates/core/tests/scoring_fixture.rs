mod common;

use std::collections::HashMap;

use ahlm_core::corpus::extract_spans;
use ahlm_core::scoring::{oracle_scores, oracle_select_exact, overlap_count, regenerate_score};
use ahlm_core::{
    gen_training_pairs, score_pair, select_spans, train_ngram, LanguageModel, MixtureWeights, PairConfig, SpanCandidate,
};
use common::toy;

fn pair_config(pairs_per_doc: usize) -> PairConfig {
    PairConfig {
        k: 48,
        j: 16,
        span_len: 8,
        stride: 16,
        span_stride: 4,
        pairs_per_doc,
        spans_per_step: 2,
        seed: 11,
    }
}

#[test]
fn every_generated_score_regenerates() {
    let (vocab, docs) = toy();
    let lm = train_ngram(&docs, vocab.size(), 3, MixtureWeights::default()).unwrap();
    let cfg = pair_config(5);
    let pairs = gen_training_pairs(&docs, &lm, &cfg, 1).unwrap();
    // the 28-token note is shorter than k + stride
    let per_doc = |id: &str| pairs.iter().filter(|p| p.doc_id == id).count();
    assert_eq!((per_doc("harbor-log"), per_doc("orchard-notes"), per_doc("short-note")), (5, 5, 0));
    let by_id: HashMap<&str, _> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    for p in &pairs {
        let d = &by_id[p.doc_id.as_str()].tokens;
        assert_eq!(p.prefix, d[p.t - cfg.k + cfg.j..p.t]);
        assert_eq!(p.future, d[p.t..p.t + cfg.stride]);
        assert!(p.span_start + p.span_len <= p.t - cfg.k + cfg.j);
        let again = score_pair(&lm, &d[p.span_start..p.span_start + p.span_len], &p.prefix, &p.future).unwrap();
        assert!((again - p.score).abs() <= 1e-12, "{again} vs {}", p.score);
        let via_lookup = regenerate_score(&lm, &by_id, p).unwrap();
        assert!((via_lookup - p.score).abs() <= 1e-12);
    }
    assert!(gen_training_pairs(&docs, &lm, &pair_config(0), 1).unwrap().is_empty());
}

/// Exhaustive search over bitmasks, written without reference to the
/// library's recursive enumeration.
fn brute_force_best<M: LanguageModel>(
    lm: &M,
    cands: &[SpanCandidate],
    prefix: &[u32],
    future: &[u32],
    max: usize,
) -> (f64, Vec<usize>) {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << cands.len()) {
        let mut chosen: Vec<&SpanCandidate> = (0..cands.len()).filter(|i| mask >> i & 1 == 1).map(|i| &cands[i]).collect();
        if chosen.len() > max {
            continue;
        }
        chosen.sort_by_key(|c| c.start);
        if chosen.windows(2).any(|w| w[0].start + w[0].tokens.len() > w[1].start) {
            continue;
        }
        let mut ctx: Vec<u32> = chosen.iter().flat_map(|c| c.tokens.iter().copied()).collect();
        ctx.extend_from_slice(prefix);
        let lp = lm.seq_logprob(&ctx, future).unwrap();
        let starts: Vec<usize> = chosen.iter().map(|c| c.start).collect();
        let recency: Vec<usize> = starts.iter().rev().copied().collect();
        let take = match &best {
            None => true,
            Some((b, bs)) => lp > *b || (lp == *b && recency > bs.iter().rev().copied().collect::<Vec<_>>()),
        };
        if take {
            best = Some((lp, starts));
        }
    }
    best.unwrap()
}

#[test]
fn exact_oracle_matches_exhaustive_script() {
    let (vocab, docs) = toy();
    let lm = train_ngram(&docs, vocab.size(), 3, MixtureWeights::default()).unwrap();
    let d = &docs[0];
    let (k, j, l) = (48, 16, 8);
    for t in [120, 150, 176, 200] {
        let all = extract_spans(d, t, k, j, l, 4).unwrap();
        // six candidates, some overlapping
        let cands: Vec<SpanCandidate> = all.iter().step_by(3).take(6).cloned().collect();
        assert_eq!(cands.len(), 6);
        let prefix = &d.tokens[t - k + j..t];
        let future = &d.tokens[t..t + 16];
        let (best_lp, best_starts) = brute_force_best(&lm, &cands, prefix, future, j / l);
        let got = oracle_select_exact(&lm, &cands, prefix, future, j, l).unwrap();
        let got_starts: Vec<usize> = got.iter().map(|c| c.start).collect();
        assert_eq!(got_starts, best_starts, "t={t}");
        // greedy can only match or trail the joint optimum
        let greedy = select_spans(&oracle_scores(&lm, &cands, prefix, future).unwrap(), j, l, true);
        let mut gs = greedy.clone();
        gs.sort_by_key(|c| c.start);
        let mut ctx: Vec<u32> = gs.iter().flat_map(|c| c.tokens.clone()).collect();
        ctx.extend_from_slice(prefix);
        assert!(lm.seq_logprob(&ctx, future).unwrap() <= best_lp + 1e-12);
    }
}

#[test]
fn overlap_counts_match_hand_counts() {
    let (_, docs) = toy();
    let d = &docs[2].tokens;
    // "bring rope , bread , and water to" against "the sand moves , so walk slowly ."
    assert_eq!(overlap_count(&d[0..8], &d[20..28]), 1);
    // "the bay on monday . the tide is": one "the", one "."
    assert_eq!(overlap_count(&d[8..16], &d[20..28]), 2);
    // "the tide is low at noon ; the" against itself
    assert_eq!(overlap_count(&d[13..21], &d[13..21]), 8);
}
