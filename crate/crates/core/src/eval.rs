//! Document-level sliding-window perplexity with per-document context reset.
//!
//! Each document is scored independently. The first window scores tokens
//! `1 .. window` with whatever prefix exists; every later window advances by
//! `stride`, conditions on the `k = window − stride` tokens before it and
//! scores the next `stride` tokens. In the selection modes the first `j` of
//! those `k` context positions are replaced by spans chosen from the ancient
//! history `w[0 .. t − k + j)`, once per window.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::assemble_context;
use crate::corpus::{check_span_config, default_span_stride, extract_spans, Document, SpanCandidate, TokenId};
use crate::error::{Error, Result};
use crate::lm::{perplexity, LanguageModel};
use crate::scoring::{oracle_scores, oracle_select_exact, overlap_oracle};
use crate::selector::{PrefixIndex, Selector};
use crate::util::map_workers;

pub const EVAL_FORMAT: &str = "ahlm-eval";
pub const IMPACT_FORMAT: &str = "ahlm-impact";
pub const REPORT_VERSION: u32 = 1;
pub const TOP_TERMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    Ahlm,
    OracleGreedy,
    OracleExact,
    OverlapOracle,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Baseline,
        Mode::Ahlm,
        Mode::OracleGreedy,
        Mode::OracleExact,
        Mode::OverlapOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Ahlm => "ahlm",
            Mode::OracleGreedy => "oracle-greedy",
            Mode::OracleExact => "oracle-exact",
            Mode::OverlapOracle => "overlap-oracle",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub window: usize,
    pub stride: usize,
    pub j: usize,
    pub span_len: usize,
    /// Candidate step; `None` means `span_len / 2`.
    pub span_stride: Option<usize>,
    pub mode: Mode,
    pub non_overlap: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            window: 1024,
            stride: 256,
            j: 512,
            span_len: 64,
            span_stride: None,
            mode: Mode::Baseline,
            non_overlap: true,
        }
    }
}

impl EvalConfig {
    /// Context positions before each scored stride.
    pub fn k(&self) -> usize {
        self.window - self.stride
    }

    pub fn resolved_span_stride(&self) -> usize {
        self.span_stride.unwrap_or_else(|| default_span_stride(self.span_len))
    }

    pub fn selects(&self) -> bool {
        self.mode != Mode::Baseline && self.j > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.window {
            return Err(Error::InvalidConfig(format!(
                "stride {} must be in 1..={}",
                self.stride, self.window
            )));
        }
        if self.j > 0 {
            check_span_config(self.j, self.span_len)?;
            let ss = self.resolved_span_stride();
            if ss == 0 || ss > self.span_len {
                return Err(Error::InvalidSpanStride {
                    stride: ss,
                    span_len: self.span_len,
                });
            }
            if self.j > self.k() {
                return Err(Error::InvalidConfig(format!(
                    "j={} exceeds window − stride = {}",
                    self.j,
                    self.k()
                )));
            }
        }
        Ok(())
    }
}

/// Spans the configured mode picks for the window starting at `t`.
fn choose<M: LanguageModel + ?Sized>(
    lm: &M,
    doc: &Document,
    t: usize,
    cfg: &EvalConfig,
    selector: Option<&Selector>,
) -> Result<Vec<SpanCandidate>> {
    let k = cfg.k();
    let candidates = extract_spans(doc, t, k, cfg.j, cfg.span_len, cfg.resolved_span_stride())?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let prefix = &doc.tokens[t - k + cfg.j..t];
    let end = (t + cfg.stride).min(doc.len());
    let future = &doc.tokens[t..end];
    let (j, l, no) = (cfg.j, cfg.span_len, cfg.non_overlap);
    Ok(match cfg.mode {
        Mode::Baseline => Vec::new(),
        Mode::Ahlm => {
            let sel = selector.ok_or(Error::MissingSelector("ahlm"))?;
            let index = PrefixIndex::new(prefix);
            let scored = candidates
                .into_iter()
                .map(|c| {
                    let s = sel.predict_with(&c.tokens, c.start, t, &index)?;
                    Ok((c, s))
                })
                .collect::<Result<Vec<_>>>()?;
            crate::context::select_spans(&scored, j, l, no)
        }
        Mode::OracleGreedy => {
            let scored = oracle_scores(lm, &candidates, prefix, future)?;
            crate::context::select_spans(&scored, j, l, no)
        }
        Mode::OracleExact => oracle_select_exact(lm, &candidates, prefix, future, j, l)?,
        Mode::OverlapOracle => overlap_oracle(&candidates, future, j, l, no),
    })
}

/// One scored window. `selected` is empty when the window used the
/// contiguous context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub doc_id: String,
    pub t: usize,
    pub tokens: usize,
    pub selected: Vec<usize>,
    pub nll: f64,
}

fn eval_document<M: LanguageModel + ?Sized>(
    lm: &M,
    doc: &Document,
    cfg: &EvalConfig,
    selector: Option<&Selector>,
) -> Result<Vec<WindowLog>> {
    let n = doc.len();
    let mut logs = Vec::new();
    let first_end = cfg.window.min(n);
    let nll = -lm.seq_logprob(&doc.tokens[..1], &doc.tokens[1..first_end])?;
    logs.push(WindowLog {
        doc_id: doc.id.clone(),
        t: 1,
        tokens: first_end - 1,
        selected: Vec::new(),
        nll,
    });
    let k = cfg.k();
    let mut t = cfg.window;
    while t < n {
        let end = (t + cfg.stride).min(n);
        let future = &doc.tokens[t..end];
        let chosen = if cfg.selects() {
            choose(lm, doc, t, cfg, selector)?
        } else {
            Vec::new()
        };
        let nll = if chosen.is_empty() {
            -lm.seq_logprob(&doc.tokens[t - k..t], future)?
        } else {
            let asm = assemble_context(&chosen, &doc.tokens[t - k + cfg.j..t], cfg.j, k)?;
            -lm.seq_logprob(&asm.assembled, future)?
        };
        let mut selected: Vec<usize> = chosen.iter().map(|c| c.start).collect();
        selected.sort_unstable();
        logs.push(WindowLog {
            doc_id: doc.id.clone(),
            t,
            tokens: end - t,
            selected,
            nll,
        });
        t += cfg.stride;
    }
    if let Some(w) = logs.iter().find(|w| !w.nll.is_finite()) {
        return Err(Error::NonFinite(format!(
            "NLL {} in {} at t={}",
            w.nll, w.doc_id, w.t
        )));
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocReport {
    pub doc_id: String,
    pub tokens: usize,
    pub nll: f64,
    pub perplexity: f64,
    pub windows: usize,
    pub selection_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSelection {
    pub doc_id: String,
    pub start: usize,
    pub len: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub documents: Vec<DocReport>,
    pub skipped_documents: Vec<String>,
    pub total_tokens: usize,
    pub total_nll: f64,
    pub mean_nll: f64,
    pub perplexity: f64,
    /// Selection counts, most frequent first.
    pub span_selections: Vec<SpanSelection>,
}

fn run_windows<M: LanguageModel + ?Sized>(
    lm: &M,
    corpus: &[Document],
    cfg: &EvalConfig,
    selector: Option<&Selector>,
    workers: usize,
) -> Result<(Vec<(String, Vec<WindowLog>)>, Vec<String>)> {
    cfg.validate()?;
    if cfg.selects() && cfg.mode == Mode::Ahlm && selector.is_none() {
        return Err(Error::MissingSelector("ahlm"));
    }
    let mut docs: Vec<&Document> = corpus.iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let (usable, short): (Vec<&Document>, Vec<&Document>) = docs.into_iter().partition(|d| d.len() >= 2);
    let logs = map_workers(&usable, workers, |d| eval_document(lm, d, cfg, selector))?;
    Ok((
        usable.iter().map(|d| d.id.clone()).zip(logs).collect(),
        short.into_iter().map(|d| d.id.clone()).collect(),
    ))
}

fn tally_spans<'a>(
    selections: impl Iterator<Item = (&'a str, &'a [usize])>,
    span_len: usize,
) -> Vec<SpanSelection> {
    let mut counts: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for (doc_id, selected) in selections {
        for &s in selected {
            *counts.entry((doc_id, s)).or_default() += 1;
        }
    }
    let mut out: Vec<SpanSelection> = counts
        .into_iter()
        .map(|((d, s), c)| SpanSelection {
            doc_id: d.to_string(),
            start: s,
            len: span_len,
            count: c,
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| (&a.doc_id, a.start).cmp(&(&b.doc_id, b.start))));
    out
}

pub fn sliding_window_eval<M: LanguageModel + ?Sized>(
    lm: &M,
    corpus: &[Document],
    cfg: &EvalConfig,
    selector: Option<&Selector>,
    workers: usize,
) -> Result<EvalReport> {
    let (per_doc, skipped) = run_windows(lm, corpus, cfg, selector, workers)?;
    let mut documents = Vec::with_capacity(per_doc.len());
    let (mut total_tokens, mut total_nll) = (0usize, 0.0f64);
    for (id, logs) in &per_doc {
        let tokens: usize = logs.iter().map(|w| w.tokens).sum();
        let nll: f64 = logs.iter().map(|w| w.nll).sum();
        total_tokens += tokens;
        total_nll += nll;
        documents.push(DocReport {
            doc_id: id.clone(),
            tokens,
            nll,
            perplexity: perplexity(nll, tokens),
            windows: logs.len(),
            selection_windows: logs.iter().filter(|w| !w.selected.is_empty()).count(),
        });
    }
    let mean_nll = if total_tokens > 0 { total_nll / total_tokens as f64 } else { f64::NAN };
    Ok(EvalReport {
        config: cfg.clone(),
        span_selections: tally_spans(
            per_doc
                .iter()
                .flat_map(|(_, l)| l)
                .map(|w| (w.doc_id.as_str(), &w.selected[..])),
            cfg.span_len,
        ),
        documents,
        skipped_documents: skipped,
        total_tokens,
        total_nll,
        mean_nll,
        perplexity: perplexity(total_nll, total_tokens),
    })
}

#[derive(Serialize)]
struct ReportHeader<'a, C> {
    record: &'static str,
    format: &'static str,
    version: u32,
    config: &'a C,
    corpus_hash: &'a str,
    lm_hash: &'a str,
    selector_hash: Option<&'a str>,
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    record: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

/// Input fingerprints echoed into every report header.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub corpus_hash: String,
    pub lm_hash: String,
    pub selector_hash: Option<String>,
}

pub(crate) fn header_line<C: Serialize>(format: &'static str, config: &C, p: &Provenance) -> Result<String> {
    Ok(serde_json::to_string(&ReportHeader {
        record: "header",
        format,
        version: REPORT_VERSION,
        config,
        corpus_hash: &p.corpus_hash,
        lm_hash: &p.lm_hash,
        selector_hash: p.selector_hash.as_deref(),
    })?)
}

#[derive(Serialize)]
struct Summary<'a> {
    total_tokens: usize,
    total_nll: f64,
    mean_nll: f64,
    perplexity: f64,
    skipped_documents: &'a [String],
    span_selections: &'a [SpanSelection],
}

impl EvalReport {
    pub fn to_jsonl(&self, p: &Provenance) -> Result<String> {
        let mut out = header_line(EVAL_FORMAT, &self.config, p)?;
        out.push('\n');
        for d in &self.documents {
            out.push_str(&serde_json::to_string(&Tagged { record: "document", body: d })?);
            out.push('\n');
        }
        let summary = Summary {
            total_tokens: self.total_tokens,
            total_nll: self.total_nll,
            mean_nll: self.mean_nll,
            perplexity: self.perplexity,
            skipped_documents: &self.skipped_documents,
            span_selections: &self.span_selections,
        };
        out.push_str(&serde_json::to_string(&Tagged { record: "summary", body: &summary })?);
        out.push('\n');
        Ok(out)
    }
}

/// Selected-versus-original comparison for one window that used selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactWindow {
    pub doc_id: String,
    pub t: usize,
    pub tokens: usize,
    pub selected: Vec<usize>,
    pub nll_selected: f64,
    pub nll_original: f64,
    /// Original-context perplexity minus selected-context perplexity.
    pub ppl_gain: f64,
    /// Token types in the selected spans that the original context lacks.
    pub introduced: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermImpact {
    pub token: TokenId,
    pub impact: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub config: EvalConfig,
    pub windows: Vec<ImpactWindow>,
    pub terms: Vec<TermImpact>,
    pub spans: Vec<SpanSelection>,
}

/// Replays `logs` into per-term impact: every term a window introduces is
/// credited with that window's perplexity gain.
pub fn term_impacts(windows: &[ImpactWindow], top: usize) -> Vec<TermImpact> {
    let mut acc: HashMap<TokenId, (f64, usize)> = HashMap::new();
    for w in windows {
        for &tok in &w.introduced {
            let e = acc.entry(tok).or_insert((0.0, 0));
            e.0 += w.ppl_gain;
            e.1 += 1;
        }
    }
    let mut terms: Vec<TermImpact> = acc
        .into_iter()
        .map(|(token, (impact, windows))| TermImpact { token, impact, windows })
        .collect();
    terms.sort_by(|a, b| b.impact.total_cmp(&a.impact).then_with(|| a.token.cmp(&b.token)));
    terms.truncate(top);
    terms
}

pub fn impact_report<M: LanguageModel + ?Sized>(
    lm: &M,
    corpus: &[Document],
    cfg: &EvalConfig,
    selector: Option<&Selector>,
    workers: usize,
) -> Result<ImpactReport> {
    let (per_doc, _) = run_windows(lm, corpus, cfg, selector, workers)?;
    let by_id: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let k = cfg.k();
    let mut windows = Vec::new();
    for (id, logs) in &per_doc {
        let doc = by_id[id.as_str()];
        for w in logs.iter().filter(|w| !w.selected.is_empty()) {
            let future = &doc.tokens[w.t..w.t + w.tokens];
            let original = &doc.tokens[w.t - k..w.t];
            let nll_original = -lm.seq_logprob(original, future)?;
            let present: HashSet<TokenId> = original.iter().copied().collect();
            let mut introduced: Vec<TokenId> = w
                .selected
                .iter()
                .flat_map(|&s| doc.tokens[s..s + cfg.span_len].iter().copied())
                .filter(|t| !present.contains(t))
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            introduced.sort_unstable();
            windows.push(ImpactWindow {
                doc_id: id.clone(),
                t: w.t,
                tokens: w.tokens,
                selected: w.selected.clone(),
                nll_selected: w.nll,
                nll_original,
                ppl_gain: perplexity(nll_original, w.tokens) - perplexity(w.nll, w.tokens),
                introduced,
            });
        }
    }
    let spans = tally_spans(
        windows.iter().map(|w| (w.doc_id.as_str(), &w.selected[..])),
        cfg.span_len,
    );
    Ok(ImpactReport {
        config: cfg.clone(),
        terms: term_impacts(&windows, TOP_TERMS),
        windows,
        spans,
    })
}

impl ImpactReport {
    pub fn to_jsonl(&self, p: &Provenance, term_text: impl Fn(TokenId) -> String) -> Result<String> {
        #[derive(Serialize)]
        struct Term<'a> {
            record: &'static str,
            rank: usize,
            term: String,
            #[serde(flatten)]
            impact: &'a TermImpact,
        }
        let mut out = header_line(IMPACT_FORMAT, &self.config, p)?;
        out.push('\n');
        for (i, t) in self.terms.iter().enumerate() {
            let rec = Term { record: "term", rank: i + 1, term: term_text(t.token), impact: t };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        for s in &self.spans {
            out.push_str(&serde_json::to_string(&Tagged { record: "span", body: s })?);
            out.push('\n');
        }
        for w in &self.windows {
            out.push_str(&serde_json::to_string(&Tagged { record: "window", body: w })?);
            out.push('\n');
        }
        Ok(out)
    }
}
