//! Sentiment lexicon machinery: corpus statistics, TF-IDF ranking, PMI and
//! SO-PMI scoring against seed words, domain-lexicon expansion, and
//! sentiment-sequence extraction.
//!
//! Probabilities are document-level frequencies: `P(w) = doc_freq(w) / n`,
//! `P(w1,w2) = cooc(w1,w2) / n` with co-occurrence scoped to the whole
//! document. PMI of a never-co-occurring pair is floored to 0 ("no
//! evidence") rather than negative infinity.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::{Corpus, LabeledDoc};
use crate::embedding::NULLSENT;
use crate::error::{Result, ScclError};
use crate::exec::{self, ExecMode};

/// Document-level counting statistics over an interned vocabulary.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    n_docs: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    term_freq: Vec<u64>,
    total_terms: u64,
    /// Same-document pair counts, keyed by (low id, high id). Only words with
    /// at least `min_count` total occurrences participate.
    cooc: HashMap<(u32, u32), u32>,
}

impl CorpusStats {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Vocabulary in first-occurrence order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|s| s.as_str())
    }

    pub fn doc_freq(&self, word: &str) -> Option<u32> {
        self.index.get(word).map(|&i| self.doc_freq[i as usize])
    }

    pub fn term_freq(&self, word: &str) -> Option<u64> {
        self.index.get(word).map(|&i| self.term_freq[i as usize])
    }

    pub fn total_terms(&self) -> u64 {
        self.total_terms
    }

    /// Same-document count for an unordered pair; `None` when either word is
    /// unknown, 0 when they never share a document.
    pub fn cooc(&self, w1: &str, w2: &str) -> Option<u32> {
        let a = *self.index.get(w1)?;
        let b = *self.index.get(w2)?;
        Some(self.cooc_by_id(a, b))
    }

    fn cooc_by_id(&self, a: u32, b: u32) -> u32 {
        if a == b {
            return self.doc_freq[a as usize];
        }
        let key = if a < b { (a, b) } else { (b, a) };
        self.cooc.get(&key).copied().unwrap_or(0)
    }

    #[cfg(test)]
    pub(crate) fn bump_cooc(&mut self, w1: &str, w2: &str) {
        let a = self.index[w1];
        let b = self.index[w2];
        let key = if a < b { (a, b) } else { (b, a) };
        *self.cooc.entry(key).or_insert(0) += 1;
    }
}

/// Count document frequencies, term frequencies, and same-document
/// co-occurrence. Pair enumeration is per-document and order-independent,
/// so the parallel mode produces identical counts.
pub fn build_stats(corpus: &Corpus, vocab_min_count: u64) -> Result<CorpusStats> {
    build_stats_mode(corpus, vocab_min_count, ExecMode::Parallel)
}

pub fn build_stats_mode(
    corpus: &Corpus,
    vocab_min_count: u64,
    mode: ExecMode,
) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(ScclError::EmptyCorpus);
    }
    let mut words: Vec<String> = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    let mut doc_freq: Vec<u32> = Vec::new();
    let mut term_freq: Vec<u64> = Vec::new();
    let mut total_terms = 0u64;

    let mut doc_ids: Vec<Vec<u32>> = Vec::with_capacity(corpus.len());
    for doc in &corpus.docs {
        let mut ids = Vec::with_capacity(doc.tokens.len());
        for tok in &doc.tokens {
            let id = match index.get(tok) {
                Some(&id) => id,
                None => {
                    let id = words.len() as u32;
                    words.push(tok.clone());
                    index.insert(tok.clone(), id);
                    doc_freq.push(0);
                    term_freq.push(0);
                    id
                }
            };
            term_freq[id as usize] += 1;
            total_terms += 1;
            ids.push(id);
        }
        let unique: BTreeSet<u32> = ids.iter().copied().collect();
        for &id in &unique {
            doc_freq[id as usize] += 1;
        }
        doc_ids.push(unique.into_iter().collect());
    }

    // chunk-local maps keep the parallel grain coarse; pair counts are
    // integer adds, so the merge is order-independent
    let eligible: Vec<bool> = term_freq.iter().map(|&tf| tf >= vocab_min_count).collect();
    let chunks: Vec<&[Vec<u32>]> = doc_ids.chunks(256).collect();
    let partials = exec::map(&chunks, mode, |chunk| {
        let mut local: HashMap<(u32, u32), u32> = HashMap::new();
        for ids in chunk.iter() {
            let kept: Vec<u32> = ids.iter().copied().filter(|&i| eligible[i as usize]).collect();
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    *local.entry((kept[i], kept[j])).or_insert(0) += 1;
                }
            }
        }
        local
    });
    let mut cooc: HashMap<(u32, u32), u32> = HashMap::new();
    for partial in partials {
        for (pair, n) in partial {
            *cooc.entry(pair).or_insert(0) += n;
        }
    }

    Ok(CorpusStats { n_docs: corpus.len(), words, index, doc_freq, term_freq, total_terms, cooc })
}

/// TF-IDF of every vocabulary word:
/// `(term_freq / total_terms) * ln(n_docs / doc_freq)`, ranked descending
/// with lexicographic tie-break.
pub fn tf_idf(stats: &CorpusStats) -> Vec<(String, f64)> {
    let n = stats.n_docs as f64;
    let total = stats.total_terms as f64;
    let mut scored: Vec<(String, f64)> = stats
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let tf = stats.term_freq[i] as f64 / total;
            let idf = (n / stats.doc_freq[i] as f64).ln();
            (w.clone(), tf * idf)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

/// Pointwise mutual information `log2(P(w1,w2) / (P(w1) P(w2)))`, floored to
/// 0 when the pair never co-occurs.
pub fn pmi(w1: &str, w2: &str, stats: &CorpusStats) -> Result<f64> {
    let df1 = stats.doc_freq(w1).ok_or_else(|| ScclError::UnknownWord(w1.to_string()))?;
    let df2 = stats.doc_freq(w2).ok_or_else(|| ScclError::UnknownWord(w2.to_string()))?;
    let joint = stats.cooc(w1, w2).expect("both words known");
    if joint == 0 {
        return Ok(0.0);
    }
    let n = stats.n_docs as f64;
    let p1 = df1 as f64 / n;
    let p2 = df2 as f64 / n;
    let p12 = joint as f64 / n;
    Ok((p12 / (p1 * p2)).log2())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub pos: BTreeSet<String>,
    pub neg: BTreeSet<String>,
}

impl SeedSet {
    pub fn new(pos: impl IntoIterator<Item = String>, neg: impl IntoIterator<Item = String>) -> Result<Self> {
        let pos: BTreeSet<String> = pos.into_iter().collect();
        let neg: BTreeSet<String> = neg.into_iter().collect();
        if let Some(w) = pos.intersection(&neg).next() {
            return Err(ScclError::Config(format!("seed word {w:?} is both positive and negative")));
        }
        Ok(SeedSet { pos, neg })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.pos.contains(word) || self.neg.contains(word)
    }

    /// `<word>\t<pos|neg>` per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ScclError::io(path, e))?;
        let mut pos = BTreeSet::new();
        let mut neg = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let Some((word, side)) = line.split_once('\t') else {
                return Err(ScclError::parse(path, line_no, "missing tab separator"));
            };
            let inserted = match side.trim() {
                "pos" => pos.insert(word.to_string()),
                "neg" => neg.insert(word.to_string()),
                other => {
                    return Err(ScclError::parse(path, line_no, format!("polarity must be pos or neg, got {other:?}")))
                }
            };
            if !inserted {
                return Err(ScclError::parse(path, line_no, format!("duplicate seed word {word:?}")));
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(ScclError::parse(path, 0, "seed file needs at least one pos and one neg word"));
        }
        if let Some(w) = pos.intersection(&neg).next() {
            return Err(ScclError::parse(path, 0, format!("seed word {w:?} is both positive and negative")));
        }
        Ok(SeedSet { pos, neg })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| ScclError::io(path, e))?;
        for w in &self.pos {
            writeln!(f, "{w}\tpos").map_err(|e| ScclError::io(path, e))?;
        }
        for w in &self.neg {
            writeln!(f, "{w}\tneg").map_err(|e| ScclError::io(path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoPmiScore {
    pub value: f64,
    /// Seed words absent from the statistics, skipped during scoring.
    pub skipped_seeds: usize,
}

/// Semantic orientation: sum of PMIs with positive seeds minus sum with
/// negative seeds.
pub fn so_pmi(word: &str, seeds: &SeedSet, stats: &CorpusStats) -> Result<SoPmiScore> {
    if seeds.pos.is_empty() || seeds.neg.is_empty() {
        return Err(ScclError::Config("seed set must have both positive and negative words".into()));
    }
    if !stats.contains(word) {
        return Err(ScclError::UnknownWord(word.to_string()));
    }
    let mut skipped = 0;
    let mut sum_side = |side: &BTreeSet<String>| -> f64 {
        let mut acc = 0.0;
        for s in side {
            match pmi(word, s, stats) {
                Ok(v) => acc += v,
                Err(_) => skipped += 1,
            }
        }
        acc
    };
    let pos_sum = sum_side(&seeds.pos);
    let neg_sum = sum_side(&seeds.neg);
    Ok(SoPmiScore { value: pos_sum - neg_sum, skipped_seeds: skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexSource {
    Base,
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexEntry {
    /// +1 or -1.
    pub polarity: i8,
    pub score: f64,
    pub source: LexSource,
}

/// Word-to-polarity map. Base entries come from a general dictionary;
/// expanded entries carry the SO-PMI score that admitted them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexEntry>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: impl Into<String>, entry: LexEntry) -> Result<()> {
        let word = word.into();
        if self.entries.contains_key(&word) {
            return Err(ScclError::Config(format!("duplicate lexicon word {word:?}")));
        }
        self.entries.insert(word, entry);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&LexEntry> {
        self.entries.get(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LexEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// (positive, negative) entry counts.
    pub fn polarity_counts(&self) -> (usize, usize) {
        let pos = self.entries.values().filter(|e| e.polarity > 0).count();
        (pos, self.entries.len() - pos)
    }

    /// Copy holding only the base-source entries.
    pub fn base_only(&self) -> Lexicon {
        Lexicon {
            entries: self
                .entries
                .iter()
                .filter(|(_, e)| e.source == LexSource::Base)
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// `<word>\t<+1|-1>\t<score>\t<base|expanded>` per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ScclError::io(path, e))?;
        let mut lex = Lexicon::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(ScclError::parse(path, line_no, format!("expected 4 tab-separated fields, got {}", fields.len())));
            }
            let polarity = match fields[1] {
                "+1" => 1,
                "-1" => -1,
                other => return Err(ScclError::parse(path, line_no, format!("polarity must be +1 or -1, got {other:?}"))),
            };
            let score: f64 = fields[2]
                .parse()
                .map_err(|_| ScclError::parse(path, line_no, format!("bad score {:?}", fields[2])))?;
            let source = match fields[3] {
                "base" => LexSource::Base,
                "expanded" => LexSource::Expanded,
                other => return Err(ScclError::parse(path, line_no, format!("source must be base or expanded, got {other:?}"))),
            };
            if lex.entries.contains_key(fields[0]) {
                return Err(ScclError::parse(path, line_no, format!("duplicate word {:?}", fields[0])));
            }
            lex.entries.insert(fields[0].to_string(), LexEntry { polarity, score, source });
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| ScclError::io(path, e))?;
        for (word, e) in &self.entries {
            let pol = if e.polarity > 0 { "+1" } else { "-1" };
            let src = match e.source {
                LexSource::Base => "base",
                LexSource::Expanded => "expanded",
            };
            writeln!(f, "{word}\t{pol}\t{}\t{src}", e.score).map_err(|e| ScclError::io(path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub word: String,
    pub tf_idf: f64,
    pub base_polarity: Option<i8>,
}

#[derive(Debug, Clone)]
pub struct RankReport {
    pub rows: Vec<Candidate>,
    pub requested: usize,
    pub vocab_size: usize,
}

impl RankReport {
    /// Fewer rows than requested (vocabulary exhausted).
    pub fn truncated(&self) -> bool {
        self.rows.len() < self.requested
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("word\ttf_idf\tbase_polarity\n");
        for c in &self.rows {
            let pol = match c.base_polarity {
                Some(1) => "+1",
                Some(_) => "-1",
                None => "",
            };
            out.push_str(&format!("{}\t{}\t{}\n", c.word, c.tf_idf, pol));
        }
        out
    }
}

/// Top-k TF-IDF words annotated with base-lexicon polarity, for manual seed
/// curation.
pub fn rank_seed_candidates(stats: &CorpusStats, base: &Lexicon, k: usize) -> RankReport {
    let ranked = tf_idf(stats);
    let rows = ranked
        .into_iter()
        .take(k)
        .map(|(word, score)| {
            let base_polarity = base.get(&word).map(|e| e.polarity);
            Candidate { word, tf_idf: score, base_polarity }
        })
        .collect();
    RankReport { rows, requested: k, vocab_size: stats.vocab_size() }
}

/// Automatic seed fallback: walk the TF-IDF ranking and keep the first `k`
/// words that already carry a base-lexicon polarity.
pub fn auto_seeds(stats: &CorpusStats, base: &Lexicon, k: usize) -> Result<SeedSet> {
    let mut pos = BTreeSet::new();
    let mut neg = BTreeSet::new();
    for (word, _) in tf_idf(stats) {
        if pos.len() + neg.len() >= k {
            break;
        }
        match base.get(&word).map(|e| e.polarity) {
            Some(p) if p > 0 => {
                pos.insert(word);
            }
            Some(_) => {
                neg.insert(word);
            }
            None => {}
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(ScclError::Config(format!(
            "auto seed selection found {} positive and {} negative candidates; both sides must be non-empty",
            pos.len(),
            neg.len()
        )));
    }
    Ok(SeedSet { pos, neg })
}

#[derive(Debug, Clone, Default)]
pub struct ExpandReport {
    pub added_pos: usize,
    pub added_neg: usize,
    pub requested_pos: usize,
    pub requested_neg: usize,
    pub skipped_seeds: usize,
}

impl ExpandReport {
    pub fn shortfall(&self) -> usize {
        (self.requested_pos - self.added_pos) + (self.requested_neg - self.added_neg)
    }
}

/// Grow `base` with the `n_pos` highest-SO-PMI vocabulary words as +1 and
/// the `n_neg` lowest as -1. Candidates are vocabulary words that are not
/// base entries and not seeds; base entries are never overwritten.
pub fn expand_lexicon(
    base: &Lexicon,
    seeds: &SeedSet,
    stats: &CorpusStats,
    n_pos: usize,
    n_neg: usize,
) -> Result<(Lexicon, ExpandReport)> {
    let mut report = ExpandReport {
        requested_pos: n_pos,
        requested_neg: n_neg,
        ..ExpandReport::default()
    };
    let mut scored: Vec<(String, f64)> = Vec::new();
    for word in stats.words() {
        if base.contains(word) || seeds.contains(word) {
            continue;
        }
        let s = so_pmi(word, seeds, stats)?;
        report.skipped_seeds = s.skipped_seeds;
        scored.push((word.to_string(), s.value));
    }

    let mut out = base.clone();
    let mut taken: HashSet<String> = HashSet::new();

    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    for (word, score) in scored.iter().take(n_pos) {
        out.insert(word.clone(), LexEntry { polarity: 1, score: *score, source: LexSource::Expanded })?;
        taken.insert(word.clone());
        report.added_pos += 1;
    }

    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    for (word, score) in scored.iter().filter(|(w, _)| !taken.contains(w)).take(n_neg) {
        out.insert(word.clone(), LexEntry { polarity: -1, score: *score, source: LexSource::Expanded })?;
        report.added_neg += 1;
    }

    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentSeq {
    pub words: Vec<String>,
    /// Polarity mark per word; 0 only for the NULLSENT sentinel.
    pub polarities: Vec<i8>,
}

impl SentimentSeq {
    pub fn is_sentinel(&self) -> bool {
        self.words.len() == 1 && self.words[0] == NULLSENT
    }
}

/// Ordered subsequence of the document's tokens present in the lexicon.
/// A document with no hits yields the NULLSENT sentinel so downstream
/// consumers always see a non-empty sequence.
pub fn extract_sentiment_sequence(doc: &LabeledDoc, lexicon: &Lexicon) -> SentimentSeq {
    let mut words = Vec::new();
    let mut polarities = Vec::new();
    for tok in &doc.tokens {
        if let Some(e) = lexicon.get(tok) {
            words.push(tok.clone());
            polarities.push(e.polarity);
        }
    }
    if words.is_empty() {
        words.push(NULLSENT.to_string());
        polarities.push(0);
    }
    SentimentSeq { words, polarities }
}
