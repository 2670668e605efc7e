//! Variant comparison harness: trains architecture subsets under a shared
//! seed and data split and reports accuracy / macro-F1 per row.

use std::fmt;

use crate::corpus::{split_train_test, Corpus};
use crate::error::{Result, ScclError};
use crate::lexicon::Lexicon;
use crate::metrics::{percent, Metrics};
use crate::model::{evaluate, train, ArchConfig, ModelConfig, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Character embeddings straight into the classifier.
    Bert,
    BertBigru,
    BertCapsule,
    BertBigruCapsule,
    /// Text route without capsules plus the base-lexicon branch.
    BertBigruNormalLexicon,
    /// Text route without capsules plus the expanded-lexicon branch.
    BertBigruExpandedLexicon,
    /// The full model with the expanded lexicon.
    Sccl,
    /// Full model evaluated on the separate target corpus.
    ScclTest,
}

pub const PAPER_VARIANTS: [Variant; 7] = [
    Variant::Bert,
    Variant::BertBigru,
    Variant::BertCapsule,
    Variant::BertBigruCapsule,
    Variant::BertBigruNormalLexicon,
    Variant::BertBigruExpandedLexicon,
    Variant::Sccl,
];

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Bert => "BERT",
            Variant::BertBigru => "BERT-BiGRU",
            Variant::BertCapsule => "BERT-CapsuleNet",
            Variant::BertBigruCapsule => "BERT-BiGRU-CapsuleNet",
            Variant::BertBigruNormalLexicon => "BERT-BiGRU-Normal Lexicon",
            Variant::BertBigruExpandedLexicon => "BERT-BiGRU-Expanded Lexicon",
            Variant::Sccl => "SCCL",
            Variant::ScclTest => "SCCL-test",
        }
    }

    pub fn parse(name: &str) -> Result<Variant> {
        let all = [
            Variant::Bert,
            Variant::BertBigru,
            Variant::BertCapsule,
            Variant::BertBigruCapsule,
            Variant::BertBigruNormalLexicon,
            Variant::BertBigruExpandedLexicon,
            Variant::Sccl,
            Variant::ScclTest,
        ];
        all.into_iter()
            .find(|v| v.label() == name)
            .ok_or_else(|| ScclError::Config(format!("unknown variant {name:?}")))
    }

    fn arch(&self) -> ArchConfig {
        match self {
            Variant::Bert => ArchConfig { use_bigru: false, use_capsule: false, use_lexicon_branch: false },
            Variant::BertBigru => ArchConfig { use_bigru: true, use_capsule: false, use_lexicon_branch: false },
            Variant::BertCapsule => ArchConfig { use_bigru: false, use_capsule: true, use_lexicon_branch: false },
            Variant::BertBigruCapsule => ArchConfig { use_bigru: true, use_capsule: true, use_lexicon_branch: false },
            Variant::BertBigruNormalLexicon | Variant::BertBigruExpandedLexicon => {
                ArchConfig { use_bigru: true, use_capsule: false, use_lexicon_branch: true }
            }
            Variant::Sccl | Variant::ScclTest => ArchConfig::default(),
        }
    }

    /// Which lexicon the variant consumes, if any.
    fn wants_base_lexicon(&self) -> bool {
        matches!(self, Variant::BertBigruNormalLexicon)
    }

    pub fn apply(&self, cfg: &ModelConfig) -> ModelConfig {
        ModelConfig { arch: self.arch(), ..cfg.clone() }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn parse_variant_list(csv: &str) -> Result<Vec<Variant>> {
    csv.split(',').map(|s| Variant::parse(s.trim())).collect()
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tacc\tf1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                r.variant.label(),
                percent(r.metrics.accuracy),
                percent(r.metrics.macro_f1)
            ));
        }
        out
    }
}

/// Train and evaluate each variant under one seed and one train/test split.
/// Lexicon variants draw from `lexicon`; the "Normal Lexicon" row uses its
/// base-source subset. `SCCL-test` evaluates the full model on `target`.
pub fn run_ablation(
    corpus: &Corpus,
    lexicon: Option<&Lexicon>,
    target: Option<&Corpus>,
    cfg: &ModelConfig,
    variants: &[Variant],
    test_fraction: f64,
) -> Result<AblationTable> {
    let (train_set, test_set) = split_train_test(corpus, test_fraction, cfg.seed)?;
    let base = lexicon.map(|l| l.base_only());
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let vcfg = variant.apply(cfg);
        let lex = if !vcfg.arch.use_lexicon_branch {
            None
        } else if variant.wants_base_lexicon() {
            Some(base.as_ref().ok_or_else(|| {
                ScclError::Config(format!("variant {} needs a lexicon", variant.label()))
            })?)
        } else {
            Some(lexicon.ok_or_else(|| {
                ScclError::Config(format!("variant {} needs a lexicon", variant.label()))
            })?)
        };
        let trained = train(&train_set, lex, &vcfg, &TrainOptions::default())?;
        let eval_set = match variant {
            Variant::ScclTest => target.ok_or_else(|| {
                ScclError::Config("SCCL-test needs a target corpus".into())
            })?,
            _ => &test_set,
        };
        let metrics = evaluate(
            &trained.params,
            eval_set,
            lex,
            &trained.vocab_char,
            &trained.vocab_word,
            &vcfg,
        )?;
        rows.push(AblationRow { variant, metrics });
    }
    Ok(AblationTable { rows })
}
