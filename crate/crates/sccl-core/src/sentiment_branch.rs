//! Sentiment-sequence route: embed the lexicon-matched words and extract
//! emotional features with parallel 1-d convolutions, masked global max
//! pooling, and a softmax classifier.

use rand::Rng;

use crate::embedding::embed_sequence;
use crate::error::{Result, ScclError};
use crate::tensor::{Tape, Tensor, Var};

/// Branch parameters bound on a tape.
#[derive(Debug, Clone)]
pub struct SentBranchVars {
    /// (kernel width, `filters x width x e` tensor) per configured width.
    pub kernels: Vec<(usize, Var)>,
    /// `6 x (filters * n_widths)` classifier weights.
    pub clf_w: Var,
    pub clf_b: Var,
}

pub fn init_kernel(filters: usize, width: usize, embed_width: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / ((width * embed_width) as f64).sqrt();
    Tensor::uniform(&[filters, width, embed_width], -bound, bound, rng)
}

pub struct SentBranchOut {
    /// Pooled convolution features, `filters * n_widths`.
    pub features: Var,
    pub logits: Var,
    /// Six-class distribution.
    pub probs: Var,
}

/// Embed `ids` (padded/truncated to `max_len`), convolve per kernel width,
/// max-pool over the windows that only read true positions, and classify.
/// Pooling never reads a window that starts beyond the true sequence, so
/// trailing padding cannot leak into the features.
pub fn sentiment_branch_forward(
    tape: &mut Tape,
    word_table: Var,
    ids: &[usize],
    max_len: usize,
    vars: &SentBranchVars,
) -> Result<SentBranchOut> {
    if ids.is_empty() {
        return Err(ScclError::shape("sentiment_branch", "empty id sequence"));
    }
    let valid_len = ids.len().min(max_len);
    let seq = embed_sequence(tape, word_table, ids, max_len)?;
    let mut pooled = Vec::with_capacity(vars.kernels.len());
    for &(width, kernel) in &vars.kernels {
        let conv = tape.conv1d(seq, kernel)?;
        let out_len = tape.value(conv).dim(0);
        let valid_windows = (valid_len + 1).saturating_sub(width).clamp(1, out_len);
        pooled.push(tape.max_pool1d_global(conv, valid_windows)?);
    }
    let features = tape.concat(&pooled, 0)?;
    let wx = tape.matmul(vars.clf_w, features)?;
    let logits = tape.add(wx, vars.clf_b)?;
    let probs = tape.softmax(logits, 0)?;
    Ok(SentBranchOut { features, logits, probs })
}
