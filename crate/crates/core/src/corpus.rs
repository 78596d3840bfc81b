//! Tokenization, vocabulary, document storage and ancient-history span tiling.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const UNK: &str = "<unk>";
pub const UNK_ID: TokenId = 0;
pub const RECORD_SEPARATOR: &str = "%%%%";

/// Bidirectional token/id map. Id 0 is always `<unk>`; the remaining ids are
/// assigned by descending corpus frequency with lexicographic tie-breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_of: HashMap<String, TokenId>,
    token_of: Vec<String>,
}

impl Vocab {
    pub fn unk_id(&self) -> TokenId {
        UNK_ID
    }

    pub fn size(&self) -> usize {
        self.token_of.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.token_of.get(id as usize).map(String::as_str)
    }

    /// Builds a vocabulary from tokens listed in id order (index 1 onwards).
    pub fn from_ordered<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut token_of = vec![UNK.to_string()];
        for t in tokens {
            let t = t.into();
            if t != UNK {
                token_of.push(t);
            }
        }
        let id_of = token_of
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab { id_of, token_of }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.token_of.iter().enumerate() {
            let _ = writeln!(out, "{tok}\t{id}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no + 1, "expected token<TAB>id"))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::parse(line_no + 1, format!("bad id {id:?}")))?;
            if id != line_no {
                return Err(Error::parse(line_no + 1, format!("id {id} out of sequence")));
            }
            if line_no == 0 && tok != UNK {
                return Err(Error::parse(1, "line 0 must be <unk>"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.is_empty() {
            return Err(Error::parse(1, "empty vocabulary file"));
        }
        let v = Vocab::from_ordered(tokens.into_iter().skip(1));
        Ok(v)
    }
}

/// Splits raw text into lowercase word strings. Leading and trailing
/// punctuation characters become tokens of their own; the literal `<unk>`
/// is kept intact so detokenized text re-tokenizes to the same ids.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let word = raw.to_lowercase();
        if word == UNK {
            out.push(word);
            continue;
        }
        let chars: Vec<char> = word.chars().collect();
        let mut lo = 0;
        let mut hi = chars.len();
        while lo < hi && is_punct(chars[lo]) {
            lo += 1;
        }
        while hi > lo && is_punct(chars[hi - 1]) {
            hi -= 1;
        }
        out.extend(chars[..lo].iter().map(|c| c.to_string()));
        if lo < hi {
            out.push(chars[lo..hi].iter().collect());
        }
        out.extend(chars[hi..].iter().map(|c| c.to_string()));
    }
    out
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '—' | '–' | '«' | '»')
}

pub fn build_vocab<'a, I>(records: I, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut any = false;
    for text in records {
        any = true;
        for w in split_words(text) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    counts.remove(UNK);
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_ordered(kept.into_iter().map(|(t, _)| t)))
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    split_words(text)
        .iter()
        .map(|w| vocab.id(w).unwrap_or(UNK_ID))
        .collect()
}

pub fn detokenize(ids: &[TokenId], vocab: &Vocab) -> String {
    ids.iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One record of a corpus file before tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

/// Parses the `%%%%`-separated corpus format. Blank records are dropped.
pub fn parse_corpus(text: &str) -> Vec<RawDocument> {
    let mut docs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut flush = |lines: &mut Vec<&str>| {
        let mut it = lines.iter().skip_while(|l| l.trim().is_empty());
        if let Some(id) = it.next() {
            let body: Vec<&str> = it.copied().collect();
            docs.push(RawDocument {
                id: id.trim().to_string(),
                text: body.join("\n"),
            });
        }
        lines.clear();
    };
    for line in text.lines() {
        if line == RECORD_SEPARATOR {
            flush(&mut current);
        } else {
            current.push(line);
        }
    }
    flush(&mut current);
    docs
}

pub fn format_corpus(docs: &[RawDocument]) -> String {
    let mut out = String::new();
    for (i, d) in docs.iter().enumerate() {
        if i > 0 {
            out.push_str(RECORD_SEPARATOR);
            out.push('\n');
        }
        out.push_str(&d.id);
        out.push('\n');
        out.push_str(&d.text);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        Document {
            id: id.into(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize_corpus(raw: &[RawDocument], vocab: &Vocab) -> Vec<Document> {
    raw.iter()
        .map(|d| Document::new(d.id.clone(), tokenize(&d.text, vocab)))
        .collect()
}

/// A fixed-length window into a document's ancient history.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub doc_id: String,
    pub start: usize,
    pub tokens: Vec<TokenId>,
}

impl SpanCandidate {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.tokens.len()
    }

    pub fn overlaps(&self, other: &SpanCandidate) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

pub fn check_span_config(j: usize, span_len: usize) -> Result<()> {
    if span_len == 0 || span_len > j || j % span_len != 0 {
        return Err(Error::InvalidSpanConfig { j, span_len });
    }
    Ok(())
}

/// Default candidate step: half a span, at least one token.
pub fn default_span_stride(span_len: usize) -> usize {
    (span_len / 2).max(1)
}

/// End (exclusive) of the ancient history at timestep `t`: `t - k + j`,
/// clamped to the document.
pub fn ancient_boundary(doc_len: usize, t: usize, k: usize, j: usize) -> usize {
    (t + j).saturating_sub(k).min(doc_len)
}

/// Tiles the ancient history `w[0 .. t-k+j)` with `span_len`-token windows
/// every `span_stride` tokens, in ascending start order.
pub fn extract_spans(
    doc: &Document,
    t: usize,
    k: usize,
    j: usize,
    span_len: usize,
    span_stride: usize,
) -> Result<Vec<SpanCandidate>> {
    check_span_config(j, span_len)?;
    if span_stride == 0 || span_stride > span_len {
        return Err(Error::InvalidSpanStride {
            stride: span_stride,
            span_len,
        });
    }
    let boundary = ancient_boundary(doc.len(), t, k, j);
    if boundary < span_len {
        return Ok(Vec::new());
    }
    Ok((0..=boundary - span_len)
        .step_by(span_stride)
        .map(|start| SpanCandidate {
            doc_id: doc.id.clone(),
            start,
            tokens: doc.tokens[start..start + span_len].to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(n: usize) -> Document {
        Document::new("d", (0..n as TokenId).collect())
    }

    #[test]
    fn vocab_frequency_order_with_reserved_unk() {
        let v = build_vocab(["a b a"], 1).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.id(UNK), Some(0));
        assert_eq!(v.id("a"), Some(1));
        assert_eq!(v.id("b"), Some(2));
    }

    #[test]
    fn vocab_min_count_maps_rare_to_unk() {
        let v = build_vocab(["a b a"], 2).unwrap();
        assert_eq!(v.id("b"), None);
        assert_eq!(tokenize("b a", &v), vec![UNK_ID, 1]);
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        let v = build_vocab(["c b a c b a"], 1).unwrap();
        assert_eq!(v.token(1), Some("a"));
        assert_eq!(v.token(2), Some("b"));
        assert_eq!(v.token(3), Some("c"));
    }

    #[test]
    fn empty_stream_is_an_error() {
        let none: [&str; 0] = [];
        assert!(matches!(build_vocab(none, 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        let v = build_vocab(["a b"], 1).unwrap();
        assert!(tokenize("", &v).is_empty());
        assert_eq!(tokenize("A b", &v), vec![1, 2]);
        assert_eq!(
            split_words("Hello, (World)! it's"),
            vec!["hello", ",", "(", "world", ")", "!", "it's"]
        );
        assert_eq!(split_words("--"), vec!["-", "-"]);
    }

    #[test]
    fn vocab_tsv_round_trip() {
        let v = build_vocab(["x y y z z z"], 1).unwrap();
        let text = v.to_tsv();
        assert!(text.starts_with("<unk>\t0\n"));
        assert_eq!(Vocab::from_tsv(&text).unwrap(), v);
        assert!(Vocab::from_tsv("a\t0\n").is_err());
        assert!(Vocab::from_tsv("<unk>\t0\nq\t5\n").is_err());
    }

    #[test]
    fn corpus_records() {
        let text = "doc1\nHello world\nsecond line\n%%%%\ndoc2\nbye\n%%%%\n";
        let docs = parse_corpus(text);
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].id, "doc1");
        assert_eq!(docs[0].text, "Hello world\nsecond line");
        assert_eq!(parse_corpus(&format_corpus(&docs)), docs);
    }

    #[test]
    fn extract_spans_basic_count() {
        // ancient history w0..w7, 2-token spans at every offset
        let spans = extract_spans(&doc(20), 12, 8, 4, 2, 1).unwrap();
        assert_eq!(spans.len(), 7);
        assert_eq!(spans[0].start, 0);
        assert_eq!(spans[6].start, 6);
        assert!(spans.iter().all(|s| s.end() <= 8));
    }

    #[test]
    fn extract_spans_at_window_start() {
        // t = k: history is w0..w(j-1) and exactly one j-length span fits
        let spans = extract_spans(&doc(20), 8, 8, 4, 4, 2).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].tokens, vec![0, 1, 2, 3]);
    }

    #[test]
    fn extract_spans_rejects_bad_configs() {
        let d = doc(50);
        assert!(matches!(
            extract_spans(&d, 40, 8, 4, 8, 1),
            Err(Error::InvalidSpanConfig { .. })
        ));
        assert!(matches!(
            extract_spans(&d, 40, 8, 6, 4, 1),
            Err(Error::InvalidSpanConfig { .. })
        ));
        assert!(matches!(
            extract_spans(&d, 40, 8, 4, 2, 3),
            Err(Error::InvalidSpanStride { .. })
        ));
        // history shorter than one span is not an error
        assert!(extract_spans(&d, 5, 8, 4, 4, 1).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn span_tiling_invariants(
            n in 0usize..200,
            t in 0usize..220,
            k in 1usize..64,
            m in 1usize..5,
            span_len in 1usize..9,
            stride_frac in 0.0f64..1.0,
        ) {
            let j = m * span_len;
            prop_assume!(j <= k);
            let stride = 1 + ((span_len - 1) as f64 * stride_frac) as usize;
            let d = doc(n);
            let spans = extract_spans(&d, t, k, j, span_len, stride).unwrap();
            let boundary = ancient_boundary(n, t, k, j);
            let expected = if boundary >= span_len { (boundary - span_len) / stride + 1 } else { 0 };
            prop_assert_eq!(spans.len(), expected);
            for s in &spans {
                prop_assert!(s.end() <= boundary);
                prop_assert_eq!(&s.tokens[..], &d.tokens[s.start..s.start + span_len]);
            }
            prop_assert!(spans.windows(2).all(|w| w[0].start < w[1].start));
        }

        #[test]
        fn detokenize_then_tokenize_is_identity(ids in proptest::collection::vec(0u32..6, 0..30)) {
            let v = build_vocab(["alpha beta , gamma . delta"], 1).unwrap();
            prop_assert_eq!(tokenize(&detokenize(&ids, &v), &v), ids);
        }
    }
}
