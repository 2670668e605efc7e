//! Shared fixtures and independent oracles for the integration suites.

#![allow(dead_code)]

use sccl_core::corpus::{Corpus, LabeledDoc};
use sccl_core::lexicon::{LexEntry, LexSource, Lexicon, SeedSet};

pub fn doc(tokens: &[&str], label: usize) -> LabeledDoc {
    LabeledDoc::new(tokens.iter().map(|s| s.to_string()).collect(), label)
}

pub fn corpus_of(lines: &[&str]) -> Corpus {
    Corpus {
        docs: lines
            .iter()
            .map(|l| LabeledDoc::new(l.split_whitespace().map(str::to_string).collect(), 0))
            .collect(),
    }
}

/// Brute-force counting oracle: every statistic recomputed from its
/// definition with nested loops, no interning, no shared code with the
/// implementation under test.
pub mod oracle {
    use std::collections::HashSet;

    pub struct BruteStats<'a> {
        docs: &'a [Vec<String>],
    }

    impl<'a> BruteStats<'a> {
        pub fn new(docs: &'a [Vec<String>]) -> Self {
            BruteStats { docs }
        }

        pub fn n_docs(&self) -> usize {
            self.docs.len()
        }

        pub fn doc_freq(&self, w: &str) -> usize {
            self.docs.iter().filter(|d| d.iter().any(|t| t == w)).count()
        }

        pub fn term_freq(&self, w: &str) -> usize {
            self.docs.iter().map(|d| d.iter().filter(|t| *t == w).count()).sum()
        }

        pub fn total_terms(&self) -> usize {
            self.docs.iter().map(|d| d.len()).sum()
        }

        pub fn cooc(&self, w1: &str, w2: &str) -> usize {
            self.docs
                .iter()
                .filter(|d| d.iter().any(|t| t == w1) && d.iter().any(|t| t == w2))
                .count()
        }

        pub fn vocab(&self) -> Vec<String> {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for d in self.docs {
                for t in d {
                    if seen.insert(t.clone()) {
                        out.push(t.clone());
                    }
                }
            }
            out
        }

        pub fn tf_idf(&self, w: &str) -> f64 {
            let tf = self.term_freq(w) as f64 / self.total_terms() as f64;
            let idf = (self.n_docs() as f64 / self.doc_freq(w) as f64).ln();
            tf * idf
        }

        pub fn pmi(&self, w1: &str, w2: &str) -> f64 {
            let joint = self.cooc(w1, w2);
            if joint == 0 {
                return 0.0;
            }
            let n = self.n_docs() as f64;
            let p1 = self.doc_freq(w1) as f64 / n;
            let p2 = self.doc_freq(w2) as f64 / n;
            ((joint as f64 / n) / (p1 * p2)).log2()
        }

        pub fn so_pmi(&self, w: &str, pos: &[&str], neg: &[&str]) -> f64 {
            let p: f64 = pos.iter().map(|s| self.pmi(w, s)).sum();
            let n: f64 = neg.iter().map(|s| self.pmi(w, s)).sum();
            p - n
        }
    }
}

/// 50-document corpus with planted co-occurrence structure: `goodword`
/// shares every one of its documents with all three positive seeds,
/// `badword` with all three negative seeds, over a bed of filler vocabulary
/// whose seed co-occurrence is diluted.
pub fn planted_corpus() -> Corpus {
    let mut lines: Vec<String> = Vec::new();
    for i in 0..10 {
        lines.push(format!("goodword p0 p1 p2 stuff{}", i % 4));
    }
    for i in 0..10 {
        lines.push(format!("badword n0 n1 n2 stuff{}", i % 4));
    }
    for i in 0..10 {
        lines.push(format!("p{} cheer{} stuff{}", i % 3, i % 2, i % 4));
    }
    for i in 0..10 {
        lines.push(format!("n{} gloom{} stuff{}", i % 3, i % 2, i % 4));
    }
    for i in 0..10 {
        lines.push(format!("plain{} stuff{} other{}", i % 6, i % 4, i % 3));
    }
    let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
    corpus_of(&refs)
}

pub fn planted_seeds() -> SeedSet {
    SeedSet::new(
        ["p0", "p1", "p2"].map(String::from),
        ["n0", "n1", "n2"].map(String::from),
    )
    .unwrap()
}

/// 32 documents in 6 cleanly separable classes. Each class has a private
/// lexicon word (`s<k>`, discriminative for both routes) plus shared filler.
pub fn learnable_corpus() -> (Corpus, Lexicon) {
    let sizes = [6usize, 6, 5, 5, 5, 5];
    let mut docs = Vec::new();
    for (class, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            docs.push(doc(&[&format!("s{class}"), &format!("f{i}")], class));
        }
    }
    let mut lex = Lexicon::new();
    for class in 0..6 {
        let polarity = if class == 1 || class == 5 { 1 } else { -1 };
        lex.insert(format!("s{class}"), LexEntry { polarity, score: 0.0, source: LexSource::Base })
            .unwrap();
    }
    (Corpus { docs }, lex)
}

/// Corpus file with the published class distribution: 40133 training docs
/// split 13993/6697/5348/5978/3167/4950 across labels 0..=5.
pub fn table_one_training_lines() -> String {
    let counts = [13993usize, 6697, 5348, 5978, 3167, 4950];
    let mut out = String::with_capacity(1 << 20);
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            out.push_str(&format!("{label}\tw{label} t{}\n", i % 97));
        }
    }
    out
}

/// Target-set counterpart: 2000 docs split 700/200/300/300/200/300.
pub fn table_one_target_lines() -> String {
    let counts = [700usize, 200, 300, 300, 200, 300];
    let mut out = String::new();
    for (label, &n) in counts.iter().enumerate() {
        for i in 0..n {
            out.push_str(&format!("{label}\tw{label} t{}\n", i % 31));
        }
    }
    out
}
