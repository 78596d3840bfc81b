//! Synthetic corpora with planted long-range repetitions.
//!
//! Background text is drawn from a Zipfian unigram distribution over
//! `vocab_size` word types. Each document also carries `n_keys` phrases of
//! `key_len` distinct rare words; a phrase first appears inside the opening
//! `key_gap` tokens and then recurs every `key_gap` tokens. With `key_gap`
//! larger than the evaluation window, each recurrence is predictable only
//! from ancient history.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::RawDocument;
use crate::error::{Error, Result};
use crate::util::seed_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub doc_len: usize,
    pub vocab_size: usize,
    pub n_keys: usize,
    pub key_len: usize,
    pub key_gap: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 50,
            doc_len: 4096,
            vocab_size: 2000,
            n_keys: 6,
            key_len: 16,
            key_gap: 1500,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPlacement {
    /// Word ranks making up the phrase.
    pub phrase: Vec<usize>,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub docs: Vec<RawDocument>,
    pub keys: Vec<Vec<KeyPlacement>>,
}

pub fn word(rank: usize) -> String {
    format!("w{rank}")
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_docs == 0 || self.doc_len == 0 {
            return bad("n_docs and doc_len must be ≥ 1".into());
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be ≥ 2".into());
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad(format!("zipf_exponent {} must be ≥ 0", self.zipf_exponent));
        }
        if self.n_keys > 0 {
            let rare = self.vocab_size - self.vocab_size / 2;
            if self.key_len == 0 || self.key_len > rare {
                return bad(format!(
                    "key_len {} must be in 1..={rare} (the rare half of the vocabulary)",
                    self.key_len
                ));
            }
            if self.n_keys * self.key_len > self.key_gap {
                return bad(format!(
                    "{} keys of length {} do not fit in key_gap {}",
                    self.n_keys, self.key_len, self.key_gap
                ));
            }
            if self.key_gap >= self.doc_len {
                return bad(format!(
                    "key_gap {} leaves no room for a recurrence in {} tokens",
                    self.key_gap, self.doc_len
                ));
            }
        }
        Ok(())
    }

    /// Planted repetitions only reach ancient history if they are further
    /// apart than the evaluation window.
    pub fn check_window(&self, window: usize) -> Result<()> {
        if self.n_keys > 0 && self.key_gap <= window {
            return Err(Error::InvalidConfig(format!(
                "key_gap {} must exceed the window {window}",
                self.key_gap
            )));
        }
        Ok(())
    }
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let zipf = Zipf::new(cfg.vocab_size as f64, cfg.zipf_exponent)
        .map_err(|e| Error::InvalidConfig(format!("zipf: {e}")))?;
    let rare_lo = cfg.vocab_size / 2 + 1;
    let rare_n = cfg.vocab_size - cfg.vocab_size / 2;
    let mut docs = Vec::with_capacity(cfg.n_docs);
    let mut keys = Vec::with_capacity(cfg.n_docs);
    for d in 0..cfg.n_docs {
        let id = format!("synth-{d:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, &id));
        let mut ranks: Vec<usize> = (0..cfg.doc_len)
            .map(|_| zipf.sample(&mut rng) as usize)
            .collect();
        let mut placed = Vec::with_capacity(cfg.n_keys);
        if cfg.n_keys > 0 {
            let slot = cfg.key_gap / cfg.n_keys;
            for k in 0..cfg.n_keys {
                let phrase: Vec<usize> = index::sample(&mut rng, rare_n, cfg.key_len)
                    .iter()
                    .map(|i| rare_lo + i)
                    .collect();
                let first = k * slot + rng.random_range(0..=slot - cfg.key_len);
                let positions: Vec<usize> = (0..)
                    .map(|m| first + m * cfg.key_gap)
                    .take_while(|p| p + cfg.key_len <= cfg.doc_len)
                    .collect();
                for &p in &positions {
                    ranks[p..p + cfg.key_len].copy_from_slice(&phrase);
                }
                placed.push(KeyPlacement { phrase, positions });
            }
        }
        let text = ranks.iter().map(|&r| word(r)).collect::<Vec<_>>().join(" ");
        docs.push(RawDocument { id, text });
        keys.push(placed);
    }
    Ok(SynthCorpus { docs, keys })
}
