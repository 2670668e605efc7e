//! Labeled corpus ingestion, stopword filtering, and seeded splits.
//!
//! Corpus files are UTF-8, one document per line: `<label>\t<tok tok ...>`
//! with labels in 0..=5 (Null, Like, Sad, Disgust, Anger, Happiness).
//! Tokens are consumed pre-segmented; text is NFC-normalized on load and
//! matched by exact string identity afterwards.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Result, ScclError};
use crate::exec::{self, ExecMode};

pub const NUM_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["Null", "Like", "Sad", "Disgust", "Anger", "Happiness"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDoc {
    pub tokens: Vec<String>,
    /// Characters of the surviving tokens, in order.
    pub chars: Vec<String>,
    pub label: usize,
    /// Set when preprocessing removed every token.
    pub degenerate: bool,
}

impl LabeledDoc {
    pub fn new(tokens: Vec<String>, label: usize) -> Self {
        let chars = derive_chars(&tokens);
        let degenerate = tokens.is_empty();
        LabeledDoc { tokens, chars, label, degenerate }
    }
}

fn derive_chars(tokens: &[String]) -> Vec<String> {
    tokens.iter().flat_map(|t| t.chars()).map(|c| c.to_string()).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub docs: Vec<LabeledDoc>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for d in &self.docs {
            counts[d.label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Default)]
pub struct StopwordSet {
    words: HashSet<String>,
}

impl StopwordSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        StopwordSet { words: words.into_iter().map(|w| nfc(&w.into())).collect() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ScclError::io(path, e))?;
        Ok(Self::from_words(text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Load a `<label>\t<tokens>` corpus file, preserving document order.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| ScclError::io(path, e))?;
    let mut docs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = nfc(raw);
        let Some((label_str, rest)) = line.split_once('\t') else {
            return Err(ScclError::parse(path, line_no, "missing tab separator"));
        };
        let label: usize = label_str
            .trim()
            .parse()
            .map_err(|_| ScclError::parse(path, line_no, format!("label {label_str:?} is not an integer")))?;
        if label >= NUM_CLASSES {
            return Err(ScclError::parse(path, line_no, format!("label out of range at line {line_no}")));
        }
        let tokens: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        docs.push(LabeledDoc::new(tokens, label));
    }
    if docs.is_empty() {
        return Err(ScclError::parse(path, 0, "corpus file is empty"));
    }
    Ok(Corpus { docs })
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| ScclError::io(path, e))?;
    for d in &corpus.docs {
        writeln!(f, "{}\t{}", d.label, d.tokens.join(" ")).map_err(|e| ScclError::io(path, e))?;
    }
    Ok(())
}

/// Remove stopwords and re-derive the character sequence. Idempotent; a doc
/// reduced to nothing keeps its label and is flagged degenerate.
pub fn preprocess(doc: &LabeledDoc, stopwords: &StopwordSet) -> LabeledDoc {
    let tokens: Vec<String> =
        doc.tokens.iter().filter(|t| !stopwords.contains(t)).cloned().collect();
    let mut out = LabeledDoc::new(tokens, doc.label);
    out.degenerate = out.degenerate || doc.degenerate;
    out
}

pub fn preprocess_corpus(corpus: &Corpus, stopwords: &StopwordSet, mode: ExecMode) -> Corpus {
    Corpus { docs: exec::map(&corpus.docs, mode, |d| preprocess(d, stopwords)) }
}

/// Split off `floor(fraction * n)` documents into a test corpus using a
/// seeded permutation. Each side preserves the original document order;
/// equal seeds reproduce the identical split.
pub fn split_train_test(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(ScclError::EmptyCorpus);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ScclError::Config(format!("split fraction must be in (0,1), got {fraction}")));
    }
    let n = corpus.len();
    let n_test = (fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let test_set: HashSet<usize> = order[..n_test].iter().copied().collect();
    let mut train = Corpus::default();
    let mut test = Corpus::default();
    for (i, d) in corpus.docs.iter().enumerate() {
        if test_set.contains(&i) {
            test.docs.push(d.clone());
        } else {
            train.docs.push(d.clone());
        }
    }
    Ok((train, test))
}

/// Stratified variant: splits each class separately so the test set keeps
/// the class proportions (each class contributes `floor(fraction * n_c)`).
pub fn split_train_test_stratified(
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(ScclError::EmptyCorpus);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ScclError::Config(format!("split fraction must be in (0,1), got {fraction}")));
    }
    let mut test_set = HashSet::new();
    for class in 0..NUM_CLASSES {
        let ids: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.docs[i].label == class).collect();
        let n_test = (fraction * ids.len() as f64).floor() as usize;
        let mut order = ids;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(class as u64));
        order.shuffle(&mut rng);
        test_set.extend(order[..n_test].iter().copied());
    }
    let mut train = Corpus::default();
    let mut test = Corpus::default();
    for (i, d) in corpus.docs.iter().enumerate() {
        if test_set.contains(&i) {
            test.docs.push(d.clone());
        } else {
            train.docs.push(d.clone());
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn doc(tokens: &[&str], label: usize) -> LabeledDoc {
        LabeledDoc::new(tokens.iter().map(|s| s.to_string()).collect(), label)
    }

    #[test]
    fn loads_two_docs_with_counts() {
        let f = write_tmp("0\t今天 天气 不错\n5\t太 开心 了\n");
        let c = load_corpus(f.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.class_counts(), [1, 0, 0, 0, 0, 1]);
        assert_eq!(c.docs[0].tokens, ["今天", "天气", "不错"]);
        assert_eq!(c.docs[0].chars, ["今", "天", "天", "气", "不", "错"]);
    }

    #[test]
    fn label_out_of_range_names_line() {
        let f = write_tmp("7\tfoo\n");
        let err = load_corpus(f.path()).unwrap_err().to_string();
        assert!(err.contains("label out of range at line 1"), "{err}");
    }

    #[test]
    fn missing_tab_and_bad_label_are_rejected() {
        let f = write_tmp("0 no tab here\n");
        assert!(load_corpus(f.path()).unwrap_err().to_string().contains("missing tab"));
        let f = write_tmp("x\tfoo\n");
        assert!(load_corpus(f.path()).unwrap_err().to_string().contains("not an integer"));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("");
        assert!(load_corpus(f.path()).is_err());
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let f = write_tmp("0\t今天 天气 不错\n3\t讨厌 的 雨\n5\t好 开心\n");
        let c = load_corpus(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_corpus(&c, out.path()).unwrap();
        let reloaded = load_corpus(out.path()).unwrap();
        assert_eq!(c, reloaded);
    }

    #[test]
    fn preprocess_filters_stopwords_and_rederives_chars() {
        let d = doc(&["的", "风景", "很", "美"], 1);
        let sw = StopwordSet::from_words(["的", "很"]);
        let p = preprocess(&d, &sw);
        assert_eq!(p.tokens, ["风景", "美"]);
        assert_eq!(p.chars, ["风", "景", "美"]);
        assert!(!p.degenerate);
        assert_eq!(p.label, 1);
    }

    #[test]
    fn preprocess_with_empty_stopwords_is_identity() {
        let d = doc(&["风景", "美"], 2);
        let p = preprocess(&d, &StopwordSet::empty());
        assert_eq!(p, d);
    }

    #[test]
    fn all_stopword_doc_is_flagged_degenerate() {
        let d = doc(&["的", "的"], 0);
        let p = preprocess(&d, &StopwordSet::from_words(["的"]));
        assert!(p.tokens.is_empty());
        assert!(p.degenerate);
    }

    #[test]
    fn preprocess_is_idempotent() {
        let d = doc(&["的", "风景", "很", "美", "的"], 4);
        let sw = StopwordSet::from_words(["的", "很"]);
        let once = preprocess(&d, &sw);
        let twice = preprocess(&once, &sw);
        assert_eq!(once, twice);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let docs = (0..100).map(|i| doc(&[&format!("w{i}")], i % 6)).collect();
        let c = Corpus { docs };
        let (tr1, te1) = split_train_test(&c, 0.1, 42).unwrap();
        assert_eq!(tr1.len(), 90);
        assert_eq!(te1.len(), 10);
        let (tr2, te2) = split_train_test(&c, 0.1, 42).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        // union preserves every doc exactly once
        let mut all: Vec<_> = tr1.docs.iter().chain(te1.docs.iter()).cloned().collect();
        all.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        let mut orig = c.docs.clone();
        orig.sort_by(|a, b| a.tokens.cmp(&b.tokens));
        assert_eq!(all, orig);
    }

    #[test]
    fn different_seeds_usually_differ() {
        let docs = (0..100).map(|i| doc(&[&format!("w{i}")], i % 6)).collect();
        let c = Corpus { docs };
        let (_, base) = split_train_test(&c, 0.1, 0).unwrap();
        let mut distinct = 0;
        for seed in 1..=10 {
            let (_, te) = split_train_test(&c, 0.1, seed).unwrap();
            if te != base {
                distinct += 1;
            }
        }
        assert!(distinct >= 9, "only {distinct}/10 seeds produced a different split");
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let c = Corpus { docs: vec![doc(&["a"], 0)] };
        assert!(split_train_test(&c, 1.0, 0).is_err());
        assert!(split_train_test(&c, 0.0, 0).is_err());
        assert!(split_train_test(&c, -0.5, 0).is_err());
    }

    #[test]
    fn stratified_split_respects_class_fractions() {
        let mut docs = Vec::new();
        for class in 0..6 {
            for i in 0..20 {
                docs.push(doc(&[&format!("c{class}w{i}")], class));
            }
        }
        let c = Corpus { docs };
        let (_, te) = split_train_test_stratified(&c, 0.25, 7).unwrap();
        assert_eq!(te.class_counts(), [5, 5, 5, 5, 5, 5]);
    }

    #[test]
    fn parallel_preprocess_matches_sequential() {
        let docs = (0..200).map(|i| doc(&["的", &format!("w{i}"), "很"], i % 6)).collect();
        let c = Corpus { docs };
        let sw = StopwordSet::from_words(["的", "很"]);
        let seq = preprocess_corpus(&c, &sw, ExecMode::Sequential);
        let par = preprocess_corpus(&c, &sw, ExecMode::Parallel);
        assert_eq!(seq, par);
    }
}
