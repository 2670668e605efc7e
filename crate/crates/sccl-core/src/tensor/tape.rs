//! Reverse-mode automatic differentiation over a dynamically recorded graph.
//!
//! Every forward pass records its primitive applications on a fresh [`Tape`];
//! node ids are handed out in topological order, so the backward sweep is a
//! single reverse iteration. Values are double precision throughout.

use crate::error::{Result, ScclError};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-12;
const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { src: Var, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax { src: Var, axis: usize },
    Conv1d { input: Var, kernels: Var },
    MaxPoolGlobal { src: Var, argmax: Vec<usize> },
    Sum(Var),
    Mean(Var),
    L2Norm(Var),
    Squash(Var),
    CrossEntropySoftmax { logits: Var, label: usize },
    Nll { probs: Var, label: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape when `v` was unreachable
    /// from the loss.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable softmax of a contiguous slice.
fn softmax_slice(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Non-trainable leaf (inputs, masks, constants).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf: gradients will be accumulated for it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Elementwise addition. One operand may be a scalar, which broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.is_scalar() {
            let s = tb.item();
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x + s).collect())?
        } else if ta.is_scalar() {
            let s = ta.item();
            Tensor::new(tb.shape().to_vec(), tb.data().iter().map(|x| x + s).collect())?
        } else {
            return Err(ScclError::shape(
                "add",
                format!("incompatible shapes {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Elementwise product. One operand may be a scalar, which broadcasts.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.is_scalar() {
            let s = tb.item();
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * s).collect())?
        } else if ta.is_scalar() {
            let s = ta.item();
            Tensor::new(tb.shape().to_vec(), tb.data().iter().map(|x| x * s).collect())?
        } else {
            return Err(ScclError::shape(
                "mul",
                format!("incompatible shapes {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * k).collect())
            .expect("same shape");
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    /// Matrix product: `(m,k)x(k,n) -> (m,n)` or matrix-vector `(m,k)x(k) -> (m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 {
            return Err(ScclError::shape(
                "matmul",
                format!("lhs must be rank 2, got {:?}", ta.shape()),
            ));
        }
        let (m, k) = (ta.dim(0), ta.dim(1));
        let value = match tb.rank() {
            1 => {
                if tb.dim(0) != k {
                    return Err(ScclError::shape(
                        "matmul",
                        format!("lhs {:?} incompatible with rhs {:?}", ta.shape(), tb.shape()),
                    ));
                }
                let mut out = vec![0.0; m];
                for r in 0..m {
                    let row = &ta.data()[r * k..(r + 1) * k];
                    out[r] = row.iter().zip(tb.data()).map(|(x, y)| x * y).sum();
                }
                Tensor::new(vec![m], out)?
            }
            2 => {
                if tb.dim(0) != k {
                    return Err(ScclError::shape(
                        "matmul",
                        format!("lhs {:?} incompatible with rhs {:?}", ta.shape(), tb.shape()),
                    ));
                }
                let n = tb.dim(1);
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    for kk in 0..k {
                        let av = ta.data()[r * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &tb.data()[kk * n..(kk + 1) * n];
                        let orow = &mut out[r * n..(r + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            _ => {
                return Err(ScclError::shape(
                    "matmul",
                    format!("rhs must be rank 1 or 2, got {:?}", tb.shape()),
                ))
            }
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(ScclError::shape(
                "transpose",
                format!("expected rank 2, got {:?}", ta.shape()),
            ));
        }
        let (m, n) = (ta.dim(0), ta.dim(1));
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = ta.data()[r * n + c];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Concatenate along `axis`. Rank-1 tensors support axis 0; rank-2 support
    /// axis 0 (stack rows) and axis 1 (extend columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(ScclError::shape("concat", "no inputs"));
        }
        let rank = self.value(parts[0]).rank();
        for &p in parts {
            if self.value(p).rank() != rank {
                return Err(ScclError::shape("concat", "mixed ranks"));
            }
        }
        let value = match (rank, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = self.value(parts[0]).dim(1);
                let mut rows = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let t = self.value(p);
                    if t.dim(1) != cols {
                        return Err(ScclError::shape(
                            "concat",
                            format!("axis 0 expects equal columns, got {:?}", t.shape()),
                        ));
                    }
                    rows += t.dim(0);
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, cols], data)?
            }
            (2, 1) => {
                let rows = self.value(parts[0]).dim(0);
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.dim(0) != rows {
                        return Err(ScclError::shape(
                            "concat",
                            format!("axis 1 expects equal rows, got {:?}", t.shape()),
                        ));
                    }
                    cols += t.dim(1);
                }
                let mut data = vec![0.0; rows * cols];
                let mut off = 0;
                for &p in parts {
                    let t = self.value(p);
                    let w = t.dim(1);
                    for r in 0..rows {
                        data[r * cols + off..r * cols + off + w]
                            .copy_from_slice(&t.data()[r * w..(r + 1) * w]);
                    }
                    off += w;
                }
                Tensor::new(vec![rows, cols], data)?
            }
            _ => {
                return Err(ScclError::shape(
                    "concat",
                    format!("unsupported rank {rank} / axis {axis}"),
                ))
            }
        };
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, ng))
    }

    /// Contiguous slice of `len` rows starting at `start` along axis 0.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.dim(0);
        if len == 0 || start + len > n {
            return Err(ScclError::shape(
                "slice",
                format!("rows {start}..{} out of bounds for {:?}", start + len, ta.shape()),
            ));
        }
        let row: usize = ta.shape()[1..].iter().product();
        let mut shape = ta.shape().to_vec();
        shape[0] = len;
        let data = ta.data()[start * row..(start + len) * row].to_vec();
        let value = Tensor::new(shape, data)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::SliceRows { src: a, start }, ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let value =
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| sigmoid(x)).collect())
                .expect("same shape");
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let value =
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.tanh()).collect())
                .expect("same shape");
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let value =
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.max(0.0)).collect())
                .expect("same shape");
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Softmax along `axis`: rank-1 axis 0, or rank-2 axis 1 (per row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let value = match (ta.rank(), axis) {
            (1, 0) => {
                let mut out = vec![0.0; ta.len()];
                softmax_slice(ta.data(), &mut out);
                Tensor::vector(out)
            }
            (2, 1) => {
                let (m, n) = (ta.dim(0), ta.dim(1));
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    softmax_slice(&ta.data()[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
                }
                Tensor::new(vec![m, n], out)?
            }
            _ => {
                return Err(ScclError::shape(
                    "softmax",
                    format!("unsupported axis {axis} for shape {:?}", ta.shape()),
                ))
            }
        };
        let ng = self.needs(a);
        Ok(self.push(value, Op::Softmax { src: a, axis }, ng))
    }

    /// Valid 1-d convolution: input `(L,e)`, kernels `(F,K,e)` -> `(L-K+1,F)`.
    pub fn conv1d(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let (tx, tk) = (self.value(input), self.value(kernels));
        if tx.rank() != 2 || tk.rank() != 3 || tx.dim(1) != tk.dim(2) {
            return Err(ScclError::shape(
                "conv1d",
                format!("input {:?} incompatible with kernels {:?}", tx.shape(), tk.shape()),
            ));
        }
        let (l, e) = (tx.dim(0), tx.dim(1));
        let (f, k) = (tk.dim(0), tk.dim(1));
        if k > l {
            return Err(ScclError::shape(
                "conv1d",
                format!("kernel width {k} exceeds input length {l}"),
            ));
        }
        let out_len = l - k + 1;
        let mut out = vec![0.0; out_len * f];
        for t in 0..out_len {
            for fi in 0..f {
                let mut acc = 0.0;
                for tau in 0..k {
                    let xr = &tx.data()[(t + tau) * e..(t + tau + 1) * e];
                    let kr = &tk.data()[(fi * k + tau) * e..(fi * k + tau + 1) * e];
                    acc += xr.iter().zip(kr).map(|(x, w)| x * w).sum::<f64>();
                }
                out[t * f + fi] = acc;
            }
        }
        let value = Tensor::new(vec![out_len, f], out)?;
        let ng = self.needs(input) || self.needs(kernels);
        Ok(self.push(value, Op::Conv1d { input, kernels }, ng))
    }

    /// Global max pool over the first `valid_rows` rows of a `(T,F)` map.
    /// Ties resolve to the earliest position.
    pub fn max_pool1d_global(&mut self, a: Var, valid_rows: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(ScclError::shape(
                "maxpool1d",
                format!("expected rank 2, got {:?}", ta.shape()),
            ));
        }
        let (t, f) = (ta.dim(0), ta.dim(1));
        if valid_rows == 0 || valid_rows > t {
            return Err(ScclError::shape(
                "maxpool1d",
                format!("valid_rows {valid_rows} out of range for {:?}", ta.shape()),
            ));
        }
        let mut out = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0usize; f];
        for r in 0..valid_rows {
            for c in 0..f {
                let v = ta.data()[r * f + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let value = Tensor::vector(out);
        let ng = self.needs(a);
        Ok(self.push(value, Op::MaxPoolGlobal { src: a, argmax }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(v), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let v = ta.data().iter().sum::<f64>() / ta.len() as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(v), Op::Mean(a), ng)
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        let v = self.value(a).squared_norm().sqrt();
        let ng = self.needs(a);
        self.push(Tensor::scalar(v), Op::L2Norm(a), ng)
    }

    /// Norm-wise squashing of a vector: `|v| = |s|^2 / (1+|s|^2)`, direction
    /// preserved. Guarded so the zero vector maps to zero with finite gradient.
    pub fn squash(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 {
            return Err(ScclError::shape(
                "squash",
                format!("expected rank 1, got {:?}", ta.shape()),
            ));
        }
        let n2 = ta.squared_norm();
        let n = n2.sqrt();
        let factor = n2 / ((1.0 + n2) * (n + NORM_EPS));
        let value = Tensor::vector(ta.data().iter().map(|x| x * factor).collect());
        let ng = self.needs(a);
        Ok(self.push(value, Op::Squash(a), ng))
    }

    /// Fused cross entropy on raw logits: `logsumexp(z) - z[label]`.
    pub fn cross_entropy_softmax(&mut self, logits: Var, label: usize) -> Result<Var> {
        let tz = self.value(logits);
        if tz.rank() != 1 {
            return Err(ScclError::shape(
                "cross_entropy",
                format!("expected rank 1 logits, got {:?}", tz.shape()),
            ));
        }
        if label >= tz.len() {
            return Err(ScclError::shape(
                "cross_entropy",
                format!("label {label} out of range for {} classes", tz.len()),
            ));
        }
        let m = tz.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + tz.data().iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(lse - tz.data()[label]);
        let ng = self.needs(logits);
        Ok(self.push(value, Op::CrossEntropySoftmax { logits, label }, ng))
    }

    /// Negative log likelihood on an existing distribution: `-ln(p[label])`,
    /// clamped inside the log.
    pub fn nll(&mut self, probs: Var, label: usize) -> Result<Var> {
        let tp = self.value(probs);
        if tp.rank() != 1 {
            return Err(ScclError::shape(
                "nll",
                format!("expected rank 1 probabilities, got {:?}", tp.shape()),
            ));
        }
        if label >= tp.len() {
            return Err(ScclError::shape(
                "nll",
                format!("label {label} out of range for {} classes", tp.len()),
            ));
        }
        let value = Tensor::scalar(-(tp.data()[label].max(LOG_EPS)).ln());
        let ng = self.needs(probs);
        Ok(self.push(value, Op::Nll { probs, label }, ng))
    }

    /// Inner product, recorded as mul followed by sum.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Reverse accumulation from a scalar loss. Returns per-node gradients;
    /// trainable leaves not reachable from the loss simply stay at zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(ScclError::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum_broadcast(&mut grads, *a, &g, None);
                    self.accum_broadcast(&mut grads, *b, &g, None);
                }
                Op::Mul(a, b) => {
                    let tb = self.value(*b).clone();
                    let ta = self.value(*a).clone();
                    self.accum_broadcast(&mut grads, *a, &g, Some(&tb));
                    self.accum_broadcast(&mut grads, *b, &g, Some(&ta));
                }
                Op::Scale(a, k) => {
                    if self.needs(*a) {
                        let mut d = g.clone();
                        for x in d.data_mut() {
                            *x *= k;
                        }
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::MatMul(a, b) => self.backward_matmul(&mut grads, *a, *b, &g),
                Op::Transpose(a) => {
                    if self.needs(*a) {
                        let (n, m) = (g.dim(0), g.dim(1));
                        let mut d = vec![0.0; n * m];
                        for r in 0..n {
                            for c in 0..m {
                                d[c * n + r] = g.data()[r * m + c];
                            }
                        }
                        self.accum(&mut grads, *a, Tensor::new(vec![m, n], d).expect("shape"));
                    }
                }
                Op::Reshape(a) => {
                    if self.needs(*a) {
                        let d = g.reshaped(self.value(*a).shape()).expect("same length");
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::Concat { parts, axis } => self.backward_concat(&mut grads, parts, *axis, &g),
                Op::SliceRows { src, start } => {
                    if self.needs(*src) {
                        let ts = self.value(*src);
                        let row: usize = ts.shape()[1..].iter().product();
                        let mut d = Tensor::zeros(ts.shape());
                        let off = start * row;
                        d.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                        self.accum(&mut grads, *src, d);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].value;
                        let d = Tensor::new(
                            y.shape().to_vec(),
                            y.data()
                                .iter()
                                .zip(g.data())
                                .map(|(&y, &gg)| gg * y * (1.0 - y))
                                .collect(),
                        )
                        .expect("shape");
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[id].value;
                        let d = Tensor::new(
                            y.shape().to_vec(),
                            y.data()
                                .iter()
                                .zip(g.data())
                                .map(|(&y, &gg)| gg * (1.0 - y * y))
                                .collect(),
                        )
                        .expect("shape");
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::Relu(a) => {
                    if self.needs(*a) {
                        let x = self.value(*a);
                        let d = Tensor::new(
                            x.shape().to_vec(),
                            x.data()
                                .iter()
                                .zip(g.data())
                                .map(|(&x, &gg)| if x > 0.0 { gg } else { 0.0 })
                                .collect(),
                        )
                        .expect("shape");
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::Softmax { src, axis } => self.backward_softmax(&mut grads, *src, *axis, id, &g),
                Op::Conv1d { input, kernels } => {
                    self.backward_conv1d(&mut grads, *input, *kernels, &g)
                }
                Op::MaxPoolGlobal { src, argmax } => {
                    if self.needs(*src) {
                        let ts = self.value(*src);
                        let f = ts.dim(1);
                        let mut d = Tensor::zeros(ts.shape());
                        for (c, &r) in argmax.iter().enumerate() {
                            d.data_mut()[r * f + c] += g.data()[c];
                        }
                        self.accum(&mut grads, *src, d);
                    }
                }
                Op::Sum(a) => {
                    if self.needs(*a) {
                        let ta = self.value(*a);
                        let mut d = Tensor::zeros(ta.shape());
                        let gg = g.item();
                        for x in d.data_mut() {
                            *x = gg;
                        }
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::Mean(a) => {
                    if self.needs(*a) {
                        let ta = self.value(*a);
                        let mut d = Tensor::zeros(ta.shape());
                        let gg = g.item() / ta.len() as f64;
                        for x in d.data_mut() {
                            *x = gg;
                        }
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::L2Norm(a) => {
                    if self.needs(*a) {
                        let ta = self.value(*a);
                        let n = self.nodes[id].value.item().max(NORM_EPS);
                        let gg = g.item();
                        let d = Tensor::new(
                            ta.shape().to_vec(),
                            ta.data().iter().map(|&x| gg * x / n).collect(),
                        )
                        .expect("shape");
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::Squash(a) => {
                    if self.needs(*a) {
                        let s = self.value(*a);
                        let n2 = s.squared_norm();
                        let n = n2.sqrt();
                        let f = n / (1.0 + n2);
                        let df = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2));
                        let sg: f64 =
                            s.data().iter().zip(g.data()).map(|(x, gg)| x * gg).sum();
                        let coef = df * sg / (n + NORM_EPS);
                        let d = Tensor::vector(
                            s.data()
                                .iter()
                                .zip(g.data())
                                .map(|(&x, &gg)| f * gg + coef * x)
                                .collect(),
                        );
                        self.accum(&mut grads, *a, d);
                    }
                }
                Op::CrossEntropySoftmax { logits, label } => {
                    if self.needs(*logits) {
                        let z = self.value(*logits);
                        let mut p = vec![0.0; z.len()];
                        softmax_slice(z.data(), &mut p);
                        p[*label] -= 1.0;
                        let gg = g.item();
                        for x in p.iter_mut() {
                            *x *= gg;
                        }
                        self.accum(&mut grads, *logits, Tensor::vector(p));
                    }
                }
                Op::Nll { probs, label } => {
                    if self.needs(*probs) {
                        let tp = self.value(*probs);
                        let mut d = Tensor::zeros(tp.shape());
                        let p = tp.data()[*label];
                        if p > LOG_EPS {
                            d.data_mut()[*label] = -g.item() / p;
                        }
                        self.accum(&mut grads, *probs, d);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        match &mut grads[v.0] {
            Some(g) => g.add_assign_scaled(&delta, 1.0),
            slot => *slot = Some(delta),
        }
    }

    /// Adjoint for broadcastable add/mul: `other == None` for add; for mul it
    /// is the co-factor of the target operand.
    fn accum_broadcast(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        g: &Tensor,
        other: Option<&Tensor>,
    ) {
        if !self.needs(v) {
            return;
        }
        let tv_shape = self.value(v).shape().to_vec();
        let delta = if tv_shape == g.shape() {
            match other {
                None => g.clone(),
                Some(o) if o.shape() == g.shape() => Tensor::new(
                    g.shape().to_vec(),
                    g.data().iter().zip(o.data()).map(|(x, y)| x * y).collect(),
                )
                .expect("shape"),
                // co-factor was the broadcast scalar
                Some(o) => {
                    let s = o.item();
                    Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| x * s).collect())
                        .expect("shape")
                }
            }
        } else {
            // this operand was the broadcast scalar: reduce over the output
            let v = match other {
                None => g.data().iter().sum(),
                Some(o) => g.data().iter().zip(o.data()).map(|(x, y)| x * y).sum(),
            };
            Tensor::scalar(v)
        };
        self.accum(grads, v, delta);
    }

    fn backward_matmul(&self, grads: &mut [Option<Tensor>], a: Var, b: Var, g: &Tensor) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.dim(0), ta.dim(1));
        if tb.rank() == 1 {
            // out (m) = A (m,k) . b (k)
            if self.needs(a) {
                let mut d = vec![0.0; m * k];
                for r in 0..m {
                    let gr = g.data()[r];
                    for c in 0..k {
                        d[r * k + c] = gr * tb.data()[c];
                    }
                }
                self.accum(grads, a, Tensor::new(vec![m, k], d).expect("shape"));
            }
            if self.needs(b) {
                let mut d = vec![0.0; k];
                for r in 0..m {
                    let gr = g.data()[r];
                    for c in 0..k {
                        d[c] += gr * ta.data()[r * k + c];
                    }
                }
                self.accum(grads, b, Tensor::vector(d));
            }
        } else {
            let n = tb.dim(1);
            if self.needs(a) {
                // dA = G . B^T
                let mut d = vec![0.0; m * k];
                for r in 0..m {
                    for c in 0..k {
                        let brow = &tb.data()[c * n..(c + 1) * n];
                        let grow = &g.data()[r * n..(r + 1) * n];
                        d[r * k + c] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                self.accum(grads, a, Tensor::new(vec![m, k], d).expect("shape"));
            }
            if self.needs(b) {
                // dB = A^T . G
                let mut d = vec![0.0; k * n];
                for r in 0..m {
                    for c in 0..k {
                        let av = ta.data()[r * k + c];
                        if av == 0.0 {
                            continue;
                        }
                        let grow = &g.data()[r * n..(r + 1) * n];
                        let drow = &mut d[c * n..(c + 1) * n];
                        for (dd, &gg) in drow.iter_mut().zip(grow) {
                            *dd += av * gg;
                        }
                    }
                }
                self.accum(grads, b, Tensor::new(vec![k, n], d).expect("shape"));
            }
        }
    }

    fn backward_concat(&self, grads: &mut [Option<Tensor>], parts: &[Var], axis: usize, g: &Tensor) {
        match axis {
            0 => {
                let mut off = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let n = tp.len();
                    if self.needs(p) {
                        let d = Tensor::new(tp.shape().to_vec(), g.data()[off..off + n].to_vec())
                            .expect("shape");
                        self.accum(grads, p, d);
                    }
                    off += n;
                }
            }
            1 => {
                let rows = g.dim(0);
                let cols = g.dim(1);
                let mut off = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let w = tp.dim(1);
                    if self.needs(p) {
                        let mut d = vec![0.0; rows * w];
                        for r in 0..rows {
                            d[r * w..(r + 1) * w]
                                .copy_from_slice(&g.data()[r * cols + off..r * cols + off + w]);
                        }
                        self.accum(grads, p, Tensor::new(vec![rows, w], d).expect("shape"));
                    }
                    off += w;
                }
            }
            _ => unreachable!("validated in forward"),
        }
    }

    fn backward_softmax(
        &self,
        grads: &mut [Option<Tensor>],
        src: Var,
        axis: usize,
        node: usize,
        g: &Tensor,
    ) {
        if !self.needs(src) {
            return;
        }
        let y = &self.nodes[node].value;
        let mut d = Tensor::zeros(y.shape());
        let row = if y.rank() == 1 || axis == 0 { y.len() } else { y.dim(1) };
        let n_rows = y.len() / row;
        for r in 0..n_rows {
            let ys = &y.data()[r * row..(r + 1) * row];
            let gs = &g.data()[r * row..(r + 1) * row];
            let inner: f64 = ys.iter().zip(gs).map(|(x, y)| x * y).sum();
            for c in 0..row {
                d.data_mut()[r * row + c] = ys[c] * (gs[c] - inner);
            }
        }
        self.accum(grads, src, d);
    }

    fn backward_conv1d(&self, grads: &mut [Option<Tensor>], input: Var, kernels: Var, g: &Tensor) {
        let (tx, tk) = (self.value(input), self.value(kernels));
        let e = tx.dim(1);
        let (f, k) = (tk.dim(0), tk.dim(1));
        let out_len = g.dim(0);
        if self.needs(input) {
            let mut d = Tensor::zeros(tx.shape());
            for t in 0..out_len {
                for fi in 0..f {
                    let gg = g.data()[t * f + fi];
                    if gg == 0.0 {
                        continue;
                    }
                    for tau in 0..k {
                        let kr = &tk.data()[(fi * k + tau) * e..(fi * k + tau + 1) * e];
                        let dr = &mut d.data_mut()[(t + tau) * e..(t + tau + 1) * e];
                        for (dd, &kk) in dr.iter_mut().zip(kr) {
                            *dd += gg * kk;
                        }
                    }
                }
            }
            self.accum(grads, input, d);
        }
        if self.needs(kernels) {
            let mut d = Tensor::zeros(tk.shape());
            for t in 0..out_len {
                for fi in 0..f {
                    let gg = g.data()[t * f + fi];
                    if gg == 0.0 {
                        continue;
                    }
                    for tau in 0..k {
                        let xr = &tx.data()[(t + tau) * e..(t + tau + 1) * e];
                        let dr = &mut d.data_mut()[(fi * k + tau) * e..(fi * k + tau + 1) * e];
                        for (dd, &xx) in dr.iter_mut().zip(xr) {
                            *dd += gg * xx;
                        }
                    }
                }
            }
            self.accum(grads, kernels, d);
        }
    }
}
