use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::splitmix64;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusLine {
    pub source: String,
    pub text: String,
}

/// Parses `source<TAB>text` lines; blank lines are skipped.
pub fn parse_tsv_corpus(input: &str) -> Result<Vec<CorpusLine>> {
    let mut lines = Vec::new();
    for (n, raw) in input.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let (source, text) = raw
            .split_once('\t')
            .ok_or_else(|| Error::InvalidArgument(format!("corpus line {}: expected `source<TAB>text`", n + 1)))?;
        if text.is_empty() {
            continue;
        }
        lines.push(CorpusLine {
            source: source.to_string(),
            text: text.to_string(),
        });
    }
    if lines.is_empty() {
        return Err(Error::InvalidArgument("corpus has no text".into()));
    }
    Ok(lines)
}

pub fn load_tsv_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusLine>> {
    parse_tsv_corpus(&std::fs::read_to_string(path)?)
}

/// Shape of a generated multi-source corpus. Each source emits text from its
/// own random first-order Markov chain, so sources differ in character statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpus {
    pub sources: usize,
    pub lines_per_source: usize,
    pub line_len: usize,
    pub alphabet: usize,
    /// Larger values make each chain more deterministic.
    pub sharpness: f64,
}

fn default_sharpness() -> f64 {
    2.0
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        SyntheticCorpus {
            sources: 16,
            lines_per_source: 8,
            line_len: 24,
            alphabet: 12,
            sharpness: default_sharpness(),
        }
    }
}

impl SyntheticCorpus {
    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.lines_per_source == 0 || self.line_len == 0 {
            return Err(Error::config(
                "workload.corpus",
                "sources, lines and line length must be positive",
            ));
        }
        if !(2..=26).contains(&self.alphabet) {
            return Err(Error::config("workload.corpus.alphabet", "must be between 2 and 26"));
        }
        if !(self.sharpness >= 0.0 && self.sharpness.is_finite()) {
            return Err(Error::config("workload.corpus.sharpness", "must be non-negative"));
        }
        Ok(())
    }
}

pub fn synthetic_corpus(shape: &SyntheticCorpus, seed: u64) -> Result<Vec<CorpusLine>> {
    shape.validate()?;
    let letters: Vec<char> = (b'a'..b'a' + shape.alphabet as u8).map(char::from).collect();
    let a = letters.len();
    let mut out = Vec::with_capacity(shape.sources * shape.lines_per_source);
    for s in 0..shape.sources {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(0xC0_0000 + s as u64)));
        let chain: Vec<Vec<f64>> = (0..a)
            .map(|_| {
                let w: Vec<f64> = (0..a)
                    .map(|_| (shape.sharpness * rng.random_range(-1.0..1.0f64) * 2.0).exp())
                    .collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|x| x / z).collect()
            })
            .collect();
        for _ in 0..shape.lines_per_source {
            let mut c = rng.random_range(0..a);
            let mut text = String::with_capacity(shape.line_len);
            for _ in 0..shape.line_len {
                text.push(letters[c]);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut next = a - 1;
                for (j, p) in chain[c].iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = j;
                        break;
                    }
                }
                c = next;
            }
            out.push(CorpusLine {
                source: format!("source-{s:02}"),
                text,
            });
        }
    }
    Ok(out)
}
