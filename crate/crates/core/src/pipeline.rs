//! Command bodies. Each stage takes the text of its inputs and returns the
//! bytes of its data output plus a short human-readable summary, so the CLI
//! only reads and writes files.

use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{build_vocab, format_corpus, parse_corpus, tokenize_corpus, Document, Vocab};
use crate::error::{Error, Result};
use crate::eval::{impact_report, sliding_window_eval, Provenance};
use crate::lm::{train_ngram, NGramCacheModel};
use crate::scoring::{gen_training_pairs, read_pairs, write_pairs};
use crate::search::grid_search;
use crate::selector::{train_selector, Selector, VocabStats};
use crate::synth::synth_corpus;
use crate::util::sha256_hex;

pub const META_FORMAT: &str = "ahlm-meta";
pub const META_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub data: String,
    pub summary: String,
}

pub fn load_corpus(corpus: &str, vocab: &Vocab) -> Result<Vec<Document>> {
    let docs = tokenize_corpus(&parse_corpus(corpus), vocab);
    if docs.is_empty() {
        return Err(Error::EmptyCorpus.input("corpus"));
    }
    Ok(docs)
}

pub fn build_vocab_stage(cfg: &RunConfig, corpus: &str) -> Result<Artifact> {
    let raw = parse_corpus(corpus);
    let vocab = build_vocab(raw.iter().map(|d| d.text.as_str()), cfg.vocab.min_count)
        .map_err(|e| e.input("corpus"))?;
    Ok(Artifact {
        summary: format!("vocabulary: {} types (min_count {})", vocab.size(), cfg.vocab.min_count),
        data: vocab.to_tsv(),
    })
}

pub fn train_lm_stage(cfg: &RunConfig, corpus: &str, vocab: &str) -> Result<Artifact> {
    let vocab = Vocab::from_tsv(vocab).map_err(|e| e.input("vocab"))?;
    let docs = load_corpus(corpus, &vocab)?;
    let lm = train_ngram(&docs, vocab.size(), cfg.lm.order, cfg.lm.weights())?;
    let tokens: usize = docs.iter().map(Document::len).sum();
    Ok(Artifact {
        summary: format!(
            "{}-gram cache model: {} documents, {} tokens, |V| = {}",
            cfg.lm.order,
            docs.len(),
            tokens,
            vocab.size()
        ),
        data: lm.to_text(),
    })
}

pub fn gen_pairs_stage(cfg: &RunConfig, corpus: &str, vocab: &str, lm: &str) -> Result<Artifact> {
    let vocab = Vocab::from_tsv(vocab).map_err(|e| e.input("vocab"))?;
    let docs = load_corpus(corpus, &vocab)?;
    let model = NGramCacheModel::from_text(lm).map_err(|e| e.input("lm"))?;
    let pc = cfg.pair_config();
    let pairs = gen_training_pairs(&docs, &model, &pc, cfg.workers)?;
    let mean = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|p| p.score).sum::<f64>() / pairs.len() as f64
    };
    Ok(Artifact {
        summary: format!("{} scored pairs, mean score {mean:.6}", pairs.len()),
        data: write_pairs(&pairs, &pc, &sha256_hex(corpus), &sha256_hex(lm))?,
    })
}

pub fn train_selector_stage(cfg: &RunConfig, corpus: &str, vocab: &str, pairs: &str) -> Result<Artifact> {
    let vocab = Vocab::from_tsv(vocab).map_err(|e| e.input("vocab"))?;
    let docs = load_corpus(corpus, &vocab)?;
    let (_, pairs) = read_pairs(pairs).map_err(|e| e.input("pairs"))?;
    let stats = VocabStats::from_corpus(&docs, vocab.size());
    let sel = train_selector(&pairs, &docs, stats, &cfg.train_config())?;
    let last = sel.loss_trace.last().copied().unwrap_or(f64::NAN);
    Ok(Artifact {
        summary: format!(
            "selector trained on {} pairs for {} epochs, final MSE {last:.6e}",
            pairs.len(),
            sel.train.epochs
        ),
        data: sel.to_text()?,
    })
}

fn provenance(corpus: &str, lm: &str, selector: Option<&str>) -> Provenance {
    Provenance {
        corpus_hash: sha256_hex(corpus),
        lm_hash: sha256_hex(lm),
        selector_hash: selector.map(sha256_hex),
    }
}

pub fn evaluate_stage(
    cfg: &RunConfig,
    corpus: &str,
    vocab: &str,
    lm: &str,
    selector: Option<&str>,
) -> Result<Artifact> {
    let vocab = Vocab::from_tsv(vocab).map_err(|e| e.input("vocab"))?;
    let docs = load_corpus(corpus, &vocab)?;
    let model = NGramCacheModel::from_text(lm).map_err(|e| e.input("lm"))?;
    let sel = selector
        .map(Selector::from_text)
        .transpose()
        .map_err(|e| e.input("selector"))?;
    let ec = cfg.eval_config();
    let report = sliding_window_eval(&model, &docs, &ec, sel.as_ref(), cfg.workers)?;
    if !report.perplexity.is_finite() && report.total_tokens > 0 {
        return Err(Error::NonFinite(format!("perplexity {}", report.perplexity)));
    }
    Ok(Artifact {
        summary: format!(
            "mode {}: perplexity {:.6} over {} tokens in {} documents",
            ec.mode,
            report.perplexity,
            report.total_tokens,
            report.documents.len()
        ),
        data: report.to_jsonl(&provenance(corpus, lm, selector))?,
    })
}

pub fn grid_search_stage(cfg: &RunConfig, corpus: &str, vocab: &str, lm: &str) -> Result<Artifact> {
    let vocab = Vocab::from_tsv(vocab).map_err(|e| e.input("vocab"))?;
    let docs = load_corpus(corpus, &vocab)?;
    let model = NGramCacheModel::from_text(lm).map_err(|e| e.input("lm"))?;
    let spec = cfg.grid_spec();
    let result = grid_search(&model, &docs, &spec, cfg.workers)?;
    let best = &result.cells[0];
    Ok(Artifact {
        summary: format!(
            "{} cells evaluated, {} skipped; best j={} ℓ={} perplexity {:.6}",
            result.cells.len(),
            result.skipped.len(),
            best.j,
            best.span_len,
            best.perplexity
        ),
        data: result.to_jsonl(&spec, &provenance(corpus, lm, None))?,
    })
}

pub fn impact_report_stage(
    cfg: &RunConfig,
    corpus: &str,
    vocab_text: &str,
    lm: &str,
    selector: Option<&str>,
) -> Result<Artifact> {
    let vocab = Vocab::from_tsv(vocab_text).map_err(|e| e.input("vocab"))?;
    let docs = load_corpus(corpus, &vocab)?;
    let model = NGramCacheModel::from_text(lm).map_err(|e| e.input("lm"))?;
    let sel = selector
        .map(Selector::from_text)
        .transpose()
        .map_err(|e| e.input("selector"))?;
    let report = impact_report(&model, &docs, &cfg.eval_config(), sel.as_ref(), cfg.workers)?;
    let term_text = |t| vocab.token(t).unwrap_or("<?>").to_string();
    let top = report
        .terms
        .iter()
        .take(5)
        .map(|t| format!("{} ({:+.4})", term_text(t.token), t.impact))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Artifact {
        summary: format!(
            "{} selection windows, {} distinct spans; top terms: {}",
            report.windows.len(),
            report.spans.len(),
            if top.is_empty() { "none" } else { &top }
        ),
        data: report.to_jsonl(&provenance(corpus, lm, selector), term_text)?,
    })
}

pub fn synth_stage(cfg: &RunConfig) -> Result<Artifact> {
    let s = synth_corpus(&cfg.synth)?;
    Ok(Artifact {
        summary: format!(
            "{} synthetic documents of {} tokens, {} planted phrases each",
            s.docs.len(),
            cfg.synth.doc_len,
            cfg.synth.n_keys
        ),
        data: format_corpus(&s.docs),
    })
}

#[derive(Serialize)]
struct Meta<'a> {
    format: &'static str,
    version: u32,
    command: &'a str,
    config: &'a RunConfig,
    inputs: Vec<Input<'a>>,
    output_hash: String,
    created_unix: u64,
}

#[derive(Serialize)]
struct Input<'a> {
    name: &'a str,
    path: &'a str,
    sha256: String,
}

/// The metadata record written next to every data output. This is the only
/// place a timestamp appears.
pub fn metadata_record(
    command: &str,
    cfg: &RunConfig,
    inputs: &[(&str, &str, &str)],
    output: &str,
    created_unix: u64,
) -> Result<String> {
    let meta = Meta {
        format: META_FORMAT,
        version: META_VERSION,
        command,
        config: cfg,
        inputs: inputs
            .iter()
            .map(|&(name, path, text)| Input {
                name,
                path,
                sha256: sha256_hex(text),
            })
            .collect(),
        output_hash: sha256_hex(output),
        created_unix,
    };
    let mut s = serde_json::to_string_pretty(&meta)?;
    s.push('\n');
    Ok(s)
}
