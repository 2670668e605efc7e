//! Symbol vocabularies and trainable embedding tables.
//!
//! Two lookup paths feed the model: a character-level table for the text
//! route and a word-level table for the sentiment-sequence route. Tables
//! are plain rank-2 parameters; sequence embedding records row lookups on
//! the tape so gradients flow only into the rows actually read.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::corpus::Corpus;
use crate::error::{Result, ScclError};
use crate::tensor::{Tape, Tensor, Var};

pub const PAD: &str = "<PAD>";
pub const UNK: &str = "<UNK>";
pub const NULLSENT: &str = "<NULLSENT>";

pub const PAD_IDX: usize = 0;
pub const UNK_IDX: usize = 1;
pub const NULLSENT_IDX: usize = 2;

const RESERVED: [&str; 3] = [PAD, UNK, NULLSENT];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabLevel {
    Char,
    Word,
}

/// Dense symbol-to-index map with reserved PAD/UNK/NULLSENT slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    symbols: Vec<String>,
}

impl Vocab {
    /// Index symbols with at least `min_count` occurrences, ordered by
    /// descending count then lexicographically; rarer symbols map to UNK.
    pub fn build(corpus: &Corpus, level: VocabLevel, min_count: u64) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in &corpus.docs {
            let seq = match level {
                VocabLevel::Char => &doc.chars,
                VocabLevel::Word => &doc.tokens,
            };
            for s in seq {
                *counts.entry(s.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(s, c)| *c >= min_count && !RESERVED.contains(s))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_symbols(kept.into_iter().map(|(s, _)| s.to_string()))
    }

    /// Build from an already-ordered symbol list (reserved slots prepended).
    pub fn from_symbols(symbols: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab { index: HashMap::new(), symbols: Vec::new() };
        for r in RESERVED {
            v.push(r.to_string());
        }
        for s in symbols {
            if !v.index.contains_key(&s) {
                v.push(s);
            }
        }
        v
    }

    fn push(&mut self, s: String) {
        self.index.insert(s.clone(), self.symbols.len());
        self.symbols.push(s);
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// Index of a symbol, UNK for anything unseen.
    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK_IDX)
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn ids(&self, symbols: &[String]) -> Vec<usize> {
        symbols.iter().map(|s| self.id(s)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.symbols.join("\n")).map_err(|e| ScclError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ScclError::io(path, e))?;
        let mut lines = text.lines();
        for r in RESERVED {
            if lines.next() != Some(r) {
                return Err(ScclError::parse(path, 0, "vocab file must start with the reserved symbols"));
            }
        }
        Ok(Self::from_symbols(lines.map(str::to_string)))
    }
}

/// Fresh table with rows drawn from U(-0.05, 0.05).
pub fn init_table(vocab_size: usize, width: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(&[vocab_size, width], -0.05, 0.05, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub matched: usize,
    pub vocab_size: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        self.matched as f64 / self.vocab_size as f64
    }
}

/// Initialize a table from a `word v1 ... ve` vector file. Vocabulary rows
/// found in the file take its values; everything else (including reserved
/// rows) is drawn from U(-0.05, 0.05) with the caller's seeded rng.
pub fn load_pretrained_vectors(
    path: &Path,
    vocab: &Vocab,
    width: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, Coverage)> {
    let text = fs::read_to_string(path).map_err(|e| ScclError::io(path, e))?;
    let mut table = init_table(vocab.size(), width, rng);
    let mut matched = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| ScclError::parse(path, line_no, format!("bad number {p:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != width {
            return Err(ScclError::parse(
                path,
                line_no,
                format!("expected {width} vector components, got {}", values.len()),
            ));
        }
        if let Some(&row) = vocab.index.get(word) {
            table.data_mut()[row * width..(row + 1) * width].copy_from_slice(&values);
            matched += 1;
        }
    }
    Ok((table, Coverage { matched, vocab_size: vocab.size() }))
}

/// Look up `ids` in an embedding table bound on the tape, truncating to
/// `max_len` rows and right-padding with the PAD row. Output is always
/// `max_len x width`.
pub fn embed_sequence(tape: &mut Tape, table: Var, ids: &[usize], max_len: usize) -> Result<Var> {
    let rows: Vec<Var> = (0..max_len)
        .map(|t| {
            let id = ids.get(t).copied().unwrap_or(PAD_IDX);
            tape.slice_rows(table, id, 1)
        })
        .collect::<Result<_>>()?;
    tape.concat(&rows, 0)
}
