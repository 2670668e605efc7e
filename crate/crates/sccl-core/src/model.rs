//! Full model assembly: configuration, parameter construction, the fused
//! two-route forward pass, the training loop, and evaluation.
//!
//! Every parameter tensor is initialized from a generator seeded by the run
//! seed combined with the parameter name, so a sub-architecture (an ablation
//! variant) starts from exactly the same weights as the corresponding slice
//! of the full model.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capsule::{affine_predict, dynamic_routing, flatten_capsules, form_primary_capsules};
use crate::corpus::{Corpus, LabeledDoc, NUM_CLASSES};
use crate::embedding::{embed_sequence, Vocab, VocabLevel, NULLSENT_IDX, PAD_IDX, UNK_IDX};
use crate::error::{Result, ScclError};
use crate::exec::{self, ExecMode};
use crate::gru::{bigru_forward, GruBiasVars, GruVars};
use crate::lexicon::{extract_sentiment_sequence, Lexicon};
use crate::metrics::Metrics;
use crate::sentiment_branch::{sentiment_branch_forward, SentBranchVars};
use crate::tensor::{
    load_params, save_params, OptimConfig, Optimizer, ParamStore, Tape, Tensor, Var,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CapsConfig {
    /// Primary capsule width cut from the flattened text feature map.
    pub d_in: usize,
    pub n_out: usize,
    pub d_out: usize,
    pub iters: usize,
    /// Share one affine map across input capsules instead of per-pair maps.
    pub share_weights: bool,
}

impl Default for CapsConfig {
    fn default() -> Self {
        CapsConfig { d_in: 16, n_out: 8, d_out: 16, iters: 3, share_weights: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SentConfig {
    pub kernel_widths: Vec<usize>,
    pub filters: usize,
}

impl Default for SentConfig {
    fn default() -> Self {
        SentConfig { kernel_widths: vec![2, 3], filters: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Mean of the two route distributions.
    Average,
    /// Softmax over an affine map of the concatenated route features.
    Concat,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub use_bigru: bool,
    pub use_capsule: bool,
    pub use_lexicon_branch: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { use_bigru: true, use_capsule: true, use_lexicon_branch: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Character positions consumed by the text route.
    pub max_char_len: usize,
    /// Word positions consumed by the sentiment route.
    pub max_sent_len: usize,
    pub e_char: usize,
    pub e_word: usize,
    pub d_gru: usize,
    pub gru_bias: bool,
    pub caps: CapsConfig,
    pub sent: SentConfig,
    pub fusion: Fusion,
    pub arch: ArchConfig,
    pub optimizer: OptimConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Minimum symbol count for vocabulary membership.
    pub vocab_min_count: u64,
    /// Exclude the PAD embedding row from optimizer updates.
    pub mask_pad_grad: bool,
    /// Compute per-document gradients of a batch in parallel. The ordered
    /// reduction keeps results identical; off by default anyway.
    pub parallel_batch: bool,
    /// Write a checkpoint every N epochs during training.
    pub checkpoint_every: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_char_len: 64,
            max_sent_len: 16,
            e_char: 32,
            e_word: 32,
            d_gru: 64,
            gru_bias: false,
            caps: CapsConfig::default(),
            sent: SentConfig::default(),
            fusion: Fusion::Average,
            arch: ArchConfig::default(),
            optimizer: OptimConfig::default(),
            batch_size: 32,
            epochs: 5,
            seed: 0,
            vocab_min_count: 1,
            mask_pad_grad: true,
            parallel_batch: false,
            checkpoint_every: None,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for tests and gradient checking.
    pub fn toy() -> Self {
        ModelConfig {
            max_char_len: 6,
            max_sent_len: 4,
            e_char: 8,
            e_word: 8,
            d_gru: 8,
            caps: CapsConfig { d_in: 8, n_out: 2, d_out: 4, iters: 3, share_weights: false },
            sent: SentConfig { kernel_widths: vec![2, 3], filters: 4 },
            batch_size: 8,
            epochs: 300,
            ..ModelConfig::default()
        }
    }

    /// Width of the map feeding the capsule layer (or mean pooling).
    fn text_map_width(&self) -> usize {
        if self.arch.use_bigru {
            2 * self.d_gru
        } else {
            self.e_char
        }
    }

    fn capsule_n_in(&self) -> usize {
        self.max_char_len * self.text_map_width() / self.caps.d_in
    }

    /// Feature width entering the text-route classifier.
    fn text_feat_width(&self) -> usize {
        if self.arch.use_capsule {
            self.caps.n_out * self.caps.d_out
        } else {
            self.text_map_width()
        }
    }

    fn sent_feat_width(&self) -> usize {
        self.sent.filters * self.sent.kernel_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_char_len", self.max_char_len),
            ("max_sent_len", self.max_sent_len),
            ("e_char", self.e_char),
            ("e_word", self.e_word),
            ("d_gru", self.d_gru),
            ("caps.d_in", self.caps.d_in),
            ("caps.n_out", self.caps.n_out),
            ("caps.d_out", self.caps.d_out),
            ("sent.filters", self.sent.filters),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ScclError::Config(format!("{name} must be positive")));
            }
        }
        if self.caps.iters < 1 {
            return Err(ScclError::Config("caps.iters must be >= 1".into()));
        }
        if self.arch.use_capsule {
            let flat = self.max_char_len * self.text_map_width();
            if flat % self.caps.d_in != 0 {
                return Err(ScclError::Config(format!(
                    "caps.d_in {} does not divide the flattened text map size {flat}",
                    self.caps.d_in
                )));
            }
        }
        if self.arch.use_lexicon_branch {
            if self.sent.kernel_widths.is_empty() {
                return Err(ScclError::Config("sent.kernel_widths must not be empty".into()));
            }
            for &w in &self.sent.kernel_widths {
                if w == 0 || w > self.max_sent_len {
                    return Err(ScclError::Config(format!(
                        "kernel width {w} must be in 1..={}",
                        self.max_sent_len
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ScclError::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| ScclError::parse(path, e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text).map_err(|e| ScclError::io(path, e))
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Generator for one named parameter: derived from the run seed and the
/// name, so initialization does not depend on which other parameters exist.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name))
}

fn uniform_param(seed: u64, name: &str, shape: &[usize], bound: f64) -> Tensor {
    Tensor::uniform(shape, -bound, bound, &mut param_rng(seed, name))
}

/// Build every trainable tensor for the configured architecture.
pub fn build_params(cfg: &ModelConfig, char_vocab: usize, word_vocab: usize) -> Result<ParamStore> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut store = ParamStore::new();
    store.insert("embed.char", uniform_param(seed, "embed.char", &[char_vocab, cfg.e_char], 0.05));

    if cfg.arch.use_bigru {
        let d = cfg.d_gru;
        let e = cfg.e_char;
        let bound = 1.0 / ((d + e) as f64).sqrt();
        for dir in ["fwd", "bwd"] {
            for gate in ["Wz", "Wr", "W"] {
                let name = format!("gru.{dir}.{gate}");
                store.insert(name.clone(), uniform_param(seed, &name, &[d, d + e], bound));
            }
            if cfg.gru_bias {
                for gate in ["bz", "br", "bh"] {
                    let name = format!("gru.{dir}.{gate}");
                    store.insert(name, Tensor::zeros(&[d]));
                }
            }
        }
    }

    if cfg.arch.use_capsule {
        let rows = if cfg.caps.share_weights { 1 } else { cfg.capsule_n_in() };
        let bound = 1.0 / (cfg.caps.d_in as f64).sqrt();
        store.insert(
            "caps.W",
            uniform_param(seed, "caps.W", &[rows, cfg.caps.n_out, cfg.caps.d_out, cfg.caps.d_in], bound),
        );
    }

    let text_w = cfg.text_feat_width();
    let bound = 1.0 / (text_w as f64).sqrt();
    store.insert("text.clf.W", uniform_param(seed, "text.clf.W", &[NUM_CLASSES, text_w], bound));
    store.insert("text.clf.b", Tensor::zeros(&[NUM_CLASSES]));

    if cfg.arch.use_lexicon_branch {
        store.insert("embed.word", uniform_param(seed, "embed.word", &[word_vocab, cfg.e_word], 0.05));
        for &w in &cfg.sent.kernel_widths {
            let name = format!("sent.conv.w{w}");
            let bound = 1.0 / ((w * cfg.e_word) as f64).sqrt();
            store.insert(name.clone(), uniform_param(seed, &name, &[cfg.sent.filters, w, cfg.e_word], bound));
        }
        let sent_w = cfg.sent_feat_width();
        let bound = 1.0 / (sent_w as f64).sqrt();
        store.insert("sent.clf.W", uniform_param(seed, "sent.clf.W", &[NUM_CLASSES, sent_w], bound));
        store.insert("sent.clf.b", Tensor::zeros(&[NUM_CLASSES]));

        if cfg.fusion == Fusion::Concat {
            let fused = text_w + sent_w;
            let bound = 1.0 / (fused as f64).sqrt();
            store.insert("fusion.W", uniform_param(seed, "fusion.W", &[NUM_CLASSES, fused], bound));
            store.insert("fusion.b", Tensor::zeros(&[NUM_CLASSES]));
        }
    }
    Ok(store)
}

/// Parameter leaves bound on one tape, aligned with the store's name order.
pub struct TapeBinds {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl TapeBinds {
    pub fn bind(tape: &mut Tape, params: &ParamStore) -> TapeBinds {
        let mut names = Vec::with_capacity(params.len());
        let mut vars = Vec::with_capacity(params.len());
        for (name, e) in params.iter() {
            names.push(name.to_string());
            vars.push(tape.param(e.value.clone()));
        }
        TapeBinds { names, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let i = self.names.binary_search_by(|n| n.as_str().cmp(name)).expect("bound parameter");
        self.vars[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.names.iter().map(|n| n.as_str()).zip(self.vars.iter().copied())
    }
}

/// Document reduced to index sequences, ready for the forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDoc {
    pub char_ids: Vec<usize>,
    pub sent_ids: Vec<usize>,
    pub label: usize,
}

/// Encode one preprocessed document. Degenerate documents become a single
/// UNK character; documents with no lexicon hits carry the NULLSENT marker.
pub fn encode_doc(
    doc: &LabeledDoc,
    lexicon: Option<&Lexicon>,
    vocab_char: &Vocab,
    vocab_word: &Vocab,
) -> EncodedDoc {
    let char_ids = if doc.chars.is_empty() {
        vec![UNK_IDX]
    } else {
        vocab_char.ids(&doc.chars)
    };
    let sent_ids = match lexicon {
        Some(lex) => {
            let seq = extract_sentiment_sequence(doc, lex);
            seq.words.iter().map(|w| vocab_word.id(w)).collect()
        }
        None => vec![NULLSENT_IDX],
    };
    EncodedDoc { char_ids, sent_ids, label: doc.label }
}

pub struct ForwardOut {
    /// Final six-class distribution.
    pub probs: Var,
    pub text_probs: Var,
    pub sent_probs: Option<Var>,
    /// Present in concat fusion: the logits the loss fuses over.
    pub fused_logits: Option<Var>,
}

/// Mean over the first `valid` rows: `map^T . w` with a constant weight
/// vector `1/valid` on the valid positions.
fn mean_pool(tape: &mut Tape, map: Var, valid: usize) -> Result<Var> {
    let rows = tape.value(map).dim(0);
    let mut w = Tensor::zeros(&[rows]);
    for i in 0..valid.min(rows) {
        w.data_mut()[i] = 1.0 / valid.min(rows) as f64;
    }
    let wv = tape.constant(w);
    let mt = tape.transpose(map)?;
    tape.matmul(mt, wv)
}

pub fn forward_doc(
    tape: &mut Tape,
    binds: &TapeBinds,
    enc: &EncodedDoc,
    cfg: &ModelConfig,
) -> Result<ForwardOut> {
    // text route: characters -> (BiGRU) -> (capsules | mean pool) -> softmax
    let char_table = binds.var("embed.char");
    let emb = embed_sequence(tape, char_table, &enc.char_ids, cfg.max_char_len)?;
    let map = if cfg.arch.use_bigru {
        let gru_vars = |dir: &str| -> GruVars {
            GruVars {
                w_update: binds.var(&format!("gru.{dir}.Wz")),
                w_reset: binds.var(&format!("gru.{dir}.Wr")),
                w_cand: binds.var(&format!("gru.{dir}.W")),
                bias: cfg.gru_bias.then(|| GruBiasVars {
                    b_update: binds.var(&format!("gru.{dir}.bz")),
                    b_reset: binds.var(&format!("gru.{dir}.br")),
                    b_cand: binds.var(&format!("gru.{dir}.bh")),
                }),
            }
        };
        bigru_forward(tape, emb, &gru_vars("fwd"), &gru_vars("bwd"))?
    } else {
        emb
    };
    let text_feat = if cfg.arch.use_capsule {
        let capsules = form_primary_capsules(tape, map, cfg.caps.d_in)?;
        let preds = affine_predict(tape, capsules, binds.var("caps.W"))?;
        let routed = dynamic_routing(tape, &preds, cfg.caps.iters)?;
        flatten_capsules(tape, &routed.capsules)?
    } else {
        mean_pool(tape, map, enc.char_ids.len())?
    };
    let wx = tape.matmul(binds.var("text.clf.W"), text_feat)?;
    let text_logits = tape.add(wx, binds.var("text.clf.b"))?;
    let text_probs = tape.softmax(text_logits, 0)?;

    if !cfg.arch.use_lexicon_branch {
        return Ok(ForwardOut { probs: text_probs, text_probs, sent_probs: None, fused_logits: None });
    }

    // sentiment route: lexicon hits -> CNN -> softmax
    let branch = SentBranchVars {
        kernels: cfg
            .sent
            .kernel_widths
            .iter()
            .map(|&w| (w, binds.var(&format!("sent.conv.w{w}"))))
            .collect(),
        clf_w: binds.var("sent.clf.W"),
        clf_b: binds.var("sent.clf.b"),
    };
    let word_table = binds.var("embed.word");
    let sent = sentiment_branch_forward(tape, word_table, &enc.sent_ids, cfg.max_sent_len, &branch)?;

    match cfg.fusion {
        Fusion::Average => {
            let sum = tape.add(text_probs, sent.probs)?;
            let probs = tape.scale(sum, 0.5);
            Ok(ForwardOut { probs, text_probs, sent_probs: Some(sent.probs), fused_logits: None })
        }
        Fusion::Concat => {
            let joint = tape.concat(&[text_feat, sent.features], 0)?;
            let wx = tape.matmul(binds.var("fusion.W"), joint)?;
            let logits = tape.add(wx, binds.var("fusion.b"))?;
            let probs = tape.softmax(logits, 0)?;
            Ok(ForwardOut {
                probs,
                text_probs,
                sent_probs: Some(sent.probs),
                fused_logits: Some(logits),
            })
        }
    }
}

/// Cross-entropy of the forward output against a label: the fused
/// softmax+NLL form when logits are available, `-ln p[label]` otherwise.
pub fn loss_var(tape: &mut Tape, out: &ForwardOut, label: usize) -> Result<Var> {
    if label >= NUM_CLASSES {
        return Err(ScclError::Config(format!("label {label} out of range")));
    }
    match out.fused_logits {
        Some(logits) => tape.cross_entropy_softmax(logits, label),
        None => tape.nll(out.probs, label),
    }
}

/// Loss and parameter gradients (in store name order) for one document.
pub fn doc_loss_and_grads(
    params: &ParamStore,
    enc: &EncodedDoc,
    cfg: &ModelConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let binds = TapeBinds::bind(&mut tape, params);
    let out = forward_doc(&mut tape, &binds, enc, cfg)?;
    let loss = loss_var(&mut tape, &out, enc.label)?;
    let grads = tape.backward(loss)?;
    let per_param = binds
        .iter()
        .map(|(name, var)| grads.wrt(var, params.get(name).expect("bound").value.shape()))
        .collect();
    Ok((tape.value(loss).item(), per_param))
}

/// Class prediction for one encoded document. Ties break to the lowest id.
pub fn predict_encoded(
    params: &ParamStore,
    enc: &EncodedDoc,
    cfg: &ModelConfig,
) -> Result<(usize, Vec<f64>)> {
    let mut tape = Tape::new();
    let binds = TapeBinds::bind(&mut tape, params);
    let out = forward_doc(&mut tape, &binds, enc, cfg)?;
    let probs = tape.value(out.probs).data().to_vec();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((best, probs))
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val: Option<Metrics>,
}

pub struct TrainedModel {
    pub params: ParamStore,
    pub vocab_char: Vocab,
    pub vocab_word: Vocab,
    pub history: Vec<EpochStats>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub validation: Option<&'a Corpus>,
    /// Directory for cadence checkpoints (`params_epoch<N>.bin`).
    pub checkpoint_dir: Option<&'a Path>,
}

/// Vocabulary for the sentiment route: the words its sequences can contain.
fn word_vocab_from_sequences(corpus: &Corpus, lexicon: Option<&Lexicon>, min_count: u64) -> Vocab {
    let docs = corpus
        .docs
        .iter()
        .map(|d| {
            let words = match lexicon {
                Some(lex) => extract_sentiment_sequence(d, lex).words,
                None => Vec::new(),
            };
            LabeledDoc::new(words, d.label)
        })
        .collect();
    Vocab::build(&Corpus { docs }, VocabLevel::Word, min_count)
}

/// Seeded mini-batch training. Shuffling, initialization, and updates all
/// derive from `cfg.seed`, so two runs produce identical parameters.
pub fn train(
    corpus: &Corpus,
    lexicon: Option<&Lexicon>,
    cfg: &ModelConfig,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(ScclError::EmptyCorpus);
    }
    let vocab_char = Vocab::build(corpus, VocabLevel::Char, cfg.vocab_min_count);
    let vocab_word = word_vocab_from_sequences(corpus, lexicon, cfg.vocab_min_count);
    let encoded: Vec<EncodedDoc> = corpus
        .docs
        .iter()
        .map(|d| encode_doc(d, lexicon, &vocab_char, &vocab_word))
        .collect();
    let val_encoded: Option<Vec<EncodedDoc>> = opts.validation.map(|v| {
        v.docs.iter().map(|d| encode_doc(d, lexicon, &vocab_char, &vocab_word)).collect()
    });

    let mut params = build_params(cfg, vocab_char.size(), vocab_word.size())?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut opt = Optimizer::from_config(&cfg.optimizer);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e3779b97f4a7c15);
    let mut history = Vec::with_capacity(cfg.epochs);

    let exec_mode = if cfg.parallel_batch { ExecMode::Parallel } else { ExecMode::Sequential };
    let mut order: Vec<usize> = (0..encoded.len()).collect();

    for epoch in 1..=cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            params.zero_grads();
            let docs: Vec<&EncodedDoc> = batch.iter().map(|&i| &encoded[i]).collect();
            let results = exec::map(&docs, exec_mode, |enc| doc_loss_and_grads(&params, enc, cfg));
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss;
                for (name, g) in names.iter().zip(&grads) {
                    params.accumulate_grad(name, g, scale)?;
                }
            }
            if cfg.mask_pad_grad {
                params.mask_grad_row("embed.char", PAD_IDX)?;
                if params.contains("embed.word") {
                    params.mask_grad_row("embed.word", PAD_IDX)?;
                }
            }
            opt.step(&mut params);
        }
        let mean_loss = loss_sum / encoded.len() as f64;
        if !mean_loss.is_finite() {
            return Err(ScclError::NonFiniteLoss { epoch, loss: mean_loss });
        }
        let val = match &val_encoded {
            Some(v) => Some(evaluate_encoded(&params, v, cfg, ExecMode::Parallel)?),
            None => None,
        };
        history.push(EpochStats { epoch, mean_loss, val });

        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, opts.checkpoint_dir) {
            if every > 0 && epoch % every == 0 {
                let path = dir.join(format!("params_epoch{epoch}.bin"));
                save_params(&params, &path)?;
            }
        }
    }

    Ok(TrainedModel { params, vocab_char, vocab_word, history })
}

fn evaluate_encoded(
    params: &ParamStore,
    encoded: &[EncodedDoc],
    cfg: &ModelConfig,
    mode: ExecMode,
) -> Result<Metrics> {
    if encoded.is_empty() {
        return Err(ScclError::EmptyCorpus);
    }
    let results = exec::map(encoded, mode, |enc| {
        predict_encoded(params, enc, cfg).map(|(pred, _)| (pred, enc.label))
    });
    let pairs: Vec<(usize, usize)> = results.into_iter().collect::<Result<_>>()?;
    Ok(Metrics::from_pairs(&pairs))
}

/// Accuracy, macro-F1, and the confusion matrix over a corpus. Documents are
/// scored in parallel over the immutable parameters; the merge is ordered,
/// so the metrics are identical in either mode.
pub fn evaluate(
    params: &ParamStore,
    data: &Corpus,
    lexicon: Option<&Lexicon>,
    vocab_char: &Vocab,
    vocab_word: &Vocab,
    cfg: &ModelConfig,
) -> Result<Metrics> {
    evaluate_mode(params, data, lexicon, vocab_char, vocab_word, cfg, ExecMode::Parallel)
}

pub fn evaluate_mode(
    params: &ParamStore,
    data: &Corpus,
    lexicon: Option<&Lexicon>,
    vocab_char: &Vocab,
    vocab_word: &Vocab,
    cfg: &ModelConfig,
    mode: ExecMode,
) -> Result<Metrics> {
    if data.is_empty() {
        return Err(ScclError::EmptyCorpus);
    }
    let encoded: Vec<EncodedDoc> =
        data.docs.iter().map(|d| encode_doc(d, lexicon, vocab_char, vocab_word)).collect();
    evaluate_encoded(params, &encoded, cfg, mode)
}

/// A trained model on disk: the binary checkpoint next to a JSON sidecar
/// (`<checkpoint>.meta.json`) holding the config, both vocabularies, and
/// the lexicon the model was trained with, so evaluation and prediction
/// need nothing but the checkpoint path.
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub vocab_char: Vocab,
    pub vocab_word: Vocab,
    pub lexicon: Option<Lexicon>,
}

#[derive(Serialize, Deserialize)]
struct LexRow {
    word: String,
    polarity: i8,
    score: f64,
    expanded: bool,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    config: ModelConfig,
    vocab_char: Vec<String>,
    vocab_word: Vec<String>,
    #[serde(default)]
    lexicon: Option<Vec<LexRow>>,
}

fn meta_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    checkpoint.with_file_name(name)
}

impl ModelBundle {
    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        save_params(&self.params, checkpoint)?;
        let strip = |v: &Vocab| -> Vec<String> {
            (3..v.size()).map(|i| v.symbol(i).to_string()).collect()
        };
        let lexicon = self.lexicon.as_ref().map(|lex| {
            lex.iter()
                .map(|(w, e)| LexRow {
                    word: w.to_string(),
                    polarity: e.polarity,
                    score: e.score,
                    expanded: e.source == crate::lexicon::LexSource::Expanded,
                })
                .collect()
        });
        let meta = BundleMeta {
            config: self.config.clone(),
            vocab_char: strip(&self.vocab_char),
            vocab_word: strip(&self.vocab_word),
            lexicon,
        };
        let path = meta_path(checkpoint);
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&path, text).map_err(|e| ScclError::io(&path, e))
    }

    pub fn load(checkpoint: &Path) -> Result<ModelBundle> {
        let params = load_params(checkpoint)?;
        let path = meta_path(checkpoint);
        let text = fs::read_to_string(&path).map_err(|e| ScclError::io(&path, e))?;
        let meta: BundleMeta = serde_json::from_str(&text)
            .map_err(|e| ScclError::parse(&path, e.line(), e.to_string()))?;
        let lexicon = match meta.lexicon {
            Some(rows) => {
                let mut lex = Lexicon::new();
                for r in rows {
                    let source = if r.expanded {
                        crate::lexicon::LexSource::Expanded
                    } else {
                        crate::lexicon::LexSource::Base
                    };
                    lex.insert(r.word, crate::lexicon::LexEntry { polarity: r.polarity, score: r.score, source })?;
                }
                Some(lex)
            }
            None => None,
        };
        Ok(ModelBundle {
            config: meta.config,
            params,
            vocab_char: Vocab::from_symbols(meta.vocab_char),
            vocab_word: Vocab::from_symbols(meta.vocab_word),
            lexicon,
        })
    }
}

/// Built-in fixture for the end-to-end gradient check: toy dimensions, six
/// separable documents, and a loss summed over one lexicon-hitting document
/// and one sentinel document. Parameters are sampled at generic scale from
/// `point_seed`; the check is fully deterministic given the seed.
pub fn full_model_gradcheck(point_seed: u64) -> Result<crate::tensor::GradCheckReport> {
    use crate::tensor::{finite_difference_check, ClosureDiffFn};

    let cfg = ModelConfig::toy();
    let mut docs = Vec::new();
    for class in 0..NUM_CLASSES {
        docs.push(LabeledDoc::new(
            vec![format!("s{class}"), format!("f{class}")],
            class,
        ));
    }
    let corpus = Corpus { docs };
    let mut lexicon = Lexicon::new();
    for class in 0..NUM_CLASSES {
        let polarity = if class % 2 == 0 { 1 } else { -1 };
        lexicon
            .insert(
                format!("s{class}"),
                crate::lexicon::LexEntry { polarity, score: 0.0, source: crate::lexicon::LexSource::Base },
            )
            .expect("distinct words");
    }
    let vocab_char = Vocab::build(&corpus, VocabLevel::Char, 1);
    let vocab_word = word_vocab_from_sequences(&corpus, Some(&lexicon), 1);
    let with_hits = encode_doc(&corpus.docs[2], Some(&lexicon), &vocab_char, &vocab_word);
    let sentinel = encode_doc(&corpus.docs[4], None, &vocab_char, &vocab_word);
    let encs = [with_hits, sentinel];

    let shapes = build_params(&cfg, vocab_char.size(), vocab_word.size())?;
    let names: Vec<String> = shapes.names().map(str::to_string).collect();
    let mut rng = param_rng(point_seed, "gradcheck.point");
    let tensors: Vec<Tensor> = names
        .iter()
        .map(|n| Tensor::uniform(shapes.get(n).expect("own name").value.shape(), -0.8, 0.8, &mut rng))
        .collect();

    let store_of = |ts: &[Tensor]| {
        let mut s = ParamStore::new();
        for (n, t) in names.iter().zip(ts) {
            s.insert(n.clone(), t.clone());
        }
        s
    };
    let f = ClosureDiffFn {
        value: |ts: &[Tensor]| {
            let store = store_of(ts);
            let mut total = 0.0;
            for enc in &encs {
                let mut tape = Tape::new();
                let binds = TapeBinds::bind(&mut tape, &store);
                let out = forward_doc(&mut tape, &binds, enc, &cfg)?;
                let loss = loss_var(&mut tape, &out, enc.label)?;
                total += tape.value(loss).item();
            }
            Ok(total)
        },
        grads: |ts: &[Tensor]| {
            let store = store_of(ts);
            let mut total: Vec<Tensor> = names
                .iter()
                .map(|n| Tensor::zeros(store.get(n).expect("own name").value.shape()))
                .collect();
            for enc in &encs {
                let (_, grads) = doc_loss_and_grads(&store, enc, &cfg)?;
                for (t, g) in total.iter_mut().zip(&grads) {
                    t.add_assign_scaled(g, 1.0);
                }
            }
            Ok(total)
        },
    };
    finite_difference_check(&f, &tensors, 1e-5)
}
