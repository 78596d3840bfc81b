//! Oracle-driven grid search over the selection budget `j` and span length `ℓ`.

use serde::{Deserialize, Serialize};

use crate::corpus::{check_span_config, Document};
use crate::error::{Error, Result};
use crate::eval::{header_line, sliding_window_eval, EvalConfig, Mode, Provenance};
use crate::lm::LanguageModel;
use crate::util::map_workers;

pub const GRID_FORMAT: &str = "ahlm-grid";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub j_values: Vec<usize>,
    pub span_values: Vec<usize>,
    /// Window, stride, span stride and overlap rule shared by every cell.
    pub template: EvalConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            j_values: vec![128, 256, 512, 768],
            span_values: vec![8, 16, 32, 64, 128],
            template: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub j: usize,
    pub span_len: usize,
    pub perplexity: f64,
    pub total_nll: f64,
    pub total_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub j: usize,
    pub span_len: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Ascending perplexity; ties by smaller `j`, then smaller `ℓ`.
    pub cells: Vec<GridCell>,
    pub skipped: Vec<SkippedCell>,
}

impl GridSpec {
    /// The evaluation a cell runs: greedy oracle at the given `(j, ℓ)`.
    pub fn cell_config(&self, j: usize, span_len: usize) -> EvalConfig {
        EvalConfig {
            j,
            span_len,
            mode: Mode::OracleGreedy,
            ..self.template.clone()
        }
    }

    pub fn partition(&self) -> (Vec<(usize, usize)>, Vec<SkippedCell>) {
        let mut valid = Vec::new();
        let mut skipped = Vec::new();
        for &j in &self.j_values {
            for &l in &self.span_values {
                let reason = match check_span_config(j, l) {
                    Err(e) => Some(e.to_string()),
                    Ok(()) => self.cell_config(j, l).validate().err().map(|e| e.to_string()),
                };
                match reason {
                    Some(reason) => skipped.push(SkippedCell { j, span_len: l, reason }),
                    None => valid.push((j, l)),
                }
            }
        }
        (valid, skipped)
    }
}

pub fn grid_search<M: LanguageModel + ?Sized>(
    lm: &M,
    corpus: &[Document],
    spec: &GridSpec,
    workers: usize,
) -> Result<GridResult> {
    let (valid, skipped) = spec.partition();
    if valid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    // cells run in parallel, each evaluation single-threaded
    let mut cells = map_workers(&valid, workers, |&(j, l)| {
        let r = sliding_window_eval(lm, corpus, &spec.cell_config(j, l), None, 1)?;
        Ok(GridCell {
            j,
            span_len: l,
            perplexity: r.perplexity,
            total_nll: r.total_nll,
            total_tokens: r.total_tokens,
        })
    })?;
    cells.sort_by(|a, b| {
        a.perplexity
            .total_cmp(&b.perplexity)
            .then(a.j.cmp(&b.j))
            .then(a.span_len.cmp(&b.span_len))
    });
    Ok(GridResult { cells, skipped })
}

impl GridResult {
    pub fn to_jsonl(&self, spec: &GridSpec, p: &Provenance) -> Result<String> {
        #[derive(Serialize)]
        struct Rec<'a, T> {
            record: &'static str,
            #[serde(flatten)]
            body: &'a T,
        }
        let mut out = header_line(GRID_FORMAT, spec, p)?;
        out.push('\n');
        for c in &self.cells {
            out.push_str(&serde_json::to_string(&Rec { record: "cell", body: c })?);
            out.push('\n');
        }
        for s in &self.skipped {
            out.push_str(&serde_json::to_string(&Rec { record: "skipped", body: s })?);
            out.push('\n');
        }
        Ok(out)
    }
}
