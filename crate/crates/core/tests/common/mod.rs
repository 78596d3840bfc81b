#![allow(dead_code)]

use ahlm_core::corpus::{build_vocab, parse_corpus, tokenize_corpus, RawDocument};
use ahlm_core::{Document, Vocab};

pub const TOY: &str = include_str!("../fixtures/toy.txt");

pub fn toy_raw() -> Vec<RawDocument> {
    parse_corpus(TOY)
}

pub fn toy() -> (Vocab, Vec<Document>) {
    let raw = toy_raw();
    let vocab = build_vocab(raw.iter().map(|d| d.text.as_str()), 1).unwrap();
    let docs = tokenize_corpus(&raw, &vocab);
    (vocab, docs)
}

/// Splits on whitespace, then walks each word character by character,
/// emitting punctuation at either edge as single-character tokens.
pub fn reference_words(text: &str) -> Vec<String> {
    let punct = |c: char| c.is_ascii_punctuation() || "“”‘’…—–«»".contains(c);
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        let w = w.to_lowercase();
        let mut head = Vec::new();
        let mut rest: &str = &w;
        while let Some(c) = rest.chars().next().filter(|&c| punct(c)) {
            head.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
        let mut tail = Vec::new();
        while let Some(c) = rest.chars().last().filter(|&c| punct(c)) {
            tail.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        out.extend(head);
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(tail.into_iter().rev());
    }
    out
}
