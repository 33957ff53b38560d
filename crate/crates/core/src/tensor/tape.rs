use std::sync::Arc;

use super::kernels::{axpy, dot, gemm, transpose};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const ROPE_BASE: f64 = 10_000.0;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Silu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Rope {
        x: Var,
        cos: Arc<[T]>,
        sin: Arc<[T]>,
        n_heads: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seqs: Arc<Vec<Vec<usize>>>,
        n_heads: usize,
        probs: Vec<Vec<T>>,
    },
    Gather {
        inputs: Vec<Var>,
        index: Vec<(usize, usize)>,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Pinball {
        pred: Var,
        target: Arc<[T]>,
        weight: Arc<[T]>,
        levels: Arc<[T]>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of operations, rebuilt on every forward pass.
///
/// Nodes are appended as they are computed, so every operation sits after
/// the operations producing its inputs and a reverse sweep is a valid
/// topological traversal.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every node that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Per-row rotation angles used by the rotary embedding, in `f64`.
///
/// Returns `(cos, sin)` of length `positions.len() * head_dim / 2`; pair `i`
/// of a head at position `p` rotates by `p * base^(-2i/head_dim)`.
pub fn rope_angles(positions: &[f64], head_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        for i in 0..half {
            let freq = ROPE_BASE.powf(-2.0 * i as f64 / head_dim as f64);
            let theta = p * freq;
            cos.push(theta.cos());
            sin.push(theta.sin());
        }
    }
    (cos, sin)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a trainable input whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Matrix product of `a[.., k]` with `b[k, n]`; leading dimensions of `a`
    /// act as a batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() < 1 || tb.rank() != 2 || ta.cols() != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(&mut out, ta.data(), tb.data(), m, k, n);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Adds a vector along the last dimension of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rank() != 1 || tb.len() != tx.cols() {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let c = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % c])
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|&v| v * c).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// `x · sigmoid(x)`, elementwise.
    pub fn silu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let t = Tensor {
            shape: tx.shape().to_vec(),
            data: tx.data().iter().map(|&v| v * sigmoid(v)).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Silu(x), rg)
    }

    /// Normalizes each row over the last dimension (epsilon 1e-5), then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let c = tx.cols();
        if tg.rank() != 1 || tg.len() != c {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        if tb.rank() != 1 || tb.len() != c {
            return Err(Error::shape("layer_norm", tx.shape(), tb.shape()));
        }
        let rows = tx.rows();
        let eps = T::of(LN_EPS);
        let inv_c = T::one() / T::of(c as f64);
        let mut xhat = vec![T::zero(); tx.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Row-wise softmax over the last dimension, max-shifted for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        if c == 0 {
            return Err(Error::shape("softmax_rows", tx.shape(), &[1]));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// Rotary position embedding on `x[N, D]`: each head's consecutive
    /// coordinate pairs are rotated by a position-dependent angle.
    pub fn rope(&mut self, x: Var, positions: &[f64], n_heads: usize) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        let rows = tx.rows();
        if n_heads == 0 || !d.is_multiple_of(n_heads) || !(d / n_heads).is_multiple_of(2) || positions.len() != rows
        {
            return Err(Error::shape("rope", tx.shape(), &[positions.len(), n_heads]));
        }
        let hd = d / n_heads;
        let (c64, s64) = rope_angles(positions, hd);
        let cos: Arc<[T]> = c64.iter().map(|&v| T::of(v)).collect();
        let sin: Arc<[T]> = s64.iter().map(|&v| T::of(v)).collect();
        let mut out = tx.data().to_vec();
        rotate(&mut out, &cos, &sin, d, hd, false);
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            t,
            Op::Rope {
                x,
                cos,
                sin,
                n_heads,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention over disjoint token sets.
    ///
    /// `q`, `k`, `v` are `[N, D]`. Each entry of `seqs` lists token rows that
    /// attend to one another (bidirectionally); tokens in different entries
    /// never interact and tokens in no entry produce zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seqs: Arc<Vec<Vec<usize>>>,
        n_heads: usize,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || tq.rank() != 2 {
            return Err(Error::shape("attention", tq.shape(), tk.shape()));
        }
        let (n, d) = (tq.shape()[0], tq.shape()[1]);
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::shape("attention", tq.shape(), &[n_heads]));
        }
        let mut seen = vec![false; n];
        for &i in seqs.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::Contract(format!(
                    "attention token {i} out of range or in two sequences"
                )));
            }
            seen[i] = true;
        }
        let hd = d / n_heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let results: Vec<(Vec<T>, Vec<T>)> = par::map_slice(&seqs, |seq| {
            let l = seq.len();
            let mut probs = vec![T::zero(); n_heads * l * l];
            let mut out = vec![T::zero(); l * d];
            for h in 0..n_heads {
                let off = h * hd;
                let p = &mut probs[h * l * l..(h + 1) * l * l];
                for (i, &ti) in seq.iter().enumerate() {
                    let qi = &qd[ti * d + off..ti * d + off + hd];
                    let row = &mut p[i * l..(i + 1) * l];
                    for (j, &tj) in seq.iter().enumerate() {
                        row[j] = dot(qi, &kd[tj * d + off..tj * d + off + hd]) * scale;
                    }
                    softmax_in_place(row);
                    let o = &mut out[i * d + off..i * d + off + hd];
                    for (j, &tj) in seq.iter().enumerate() {
                        axpy(o, row[j], &vd[tj * d + off..tj * d + off + hd]);
                    }
                }
            }
            (out, probs)
        });
        let mut out = vec![T::zero(); n * d];
        let mut probs = Vec::with_capacity(seqs.len());
        for (seq, (o, p)) in seqs.iter().zip(results) {
            for (i, &ti) in seq.iter().enumerate() {
                out[ti * d..(ti + 1) * d].copy_from_slice(&o[i * d..(i + 1) * d]);
            }
            probs.push(p);
        }
        let t = Tensor::new(vec![n, d], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                seqs,
                n_heads,
                probs,
            },
            rg,
        ))
    }

    /// Builds a `[index.len(), C]` matrix whose row `r` is row `index[r].1`
    /// of input `inputs[index[r].0]` (each viewed as `[rows, C]`).
    pub fn gather_rows(&mut self, inputs: &[Var], index: Vec<(usize, usize)>) -> Result<Var> {
        let c = match inputs.first() {
            Some(&v) => self.value(v).cols(),
            None => return Err(Error::Contract("gather_rows needs an input".into())),
        };
        for &v in inputs {
            if self.value(v).cols() != c {
                return Err(Error::shape("gather_rows", &[c], self.value(v).shape()));
            }
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &(src, row) in &index {
            let t = inputs
                .get(src)
                .map(|&v| self.value(v))
                .ok_or_else(|| Error::Contract(format!("gather source {src} missing")))?;
            if row >= t.rows() {
                return Err(Error::Contract(format!(
                    "gather row {row} out of range for {:?}",
                    t.shape()
                )));
            }
            out.extend_from_slice(&t.data()[row * c..(row + 1) * c]);
        }
        let t = Tensor::new(vec![index.len(), c], out)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            t,
            Op::Gather {
                inputs: inputs.to_vec(),
                index,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::of(t.len().max(1) as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean pinball loss of `pred[N, Q]` against `target[N]`, over rows with
    /// nonzero `weight` and all `Q` levels. Rows with zero weight are skipped
    /// entirely, so their targets never enter the arithmetic.
    pub fn pinball(
        &mut self,
        pred: Var,
        target: Arc<[T]>,
        weight: Arc<[T]>,
        levels: Arc<[T]>,
    ) -> Result<Var> {
        let tp = self.value(pred);
        let (n, q) = (tp.rows(), tp.cols());
        if target.len() != n || weight.len() != n || levels.len() != q {
            return Err(Error::shape(
                "pinball",
                tp.shape(),
                &[target.len(), weight.len(), levels.len()],
            ));
        }
        let count = weight.iter().filter(|w| **w != T::zero()).count();
        if count == 0 {
            return Err(Error::Degenerate("pinball loss has no observed cells".into()));
        }
        let mut acc = T::zero();
        for r in 0..n {
            if weight[r] == T::zero() {
                continue;
            }
            for (j, &tau) in levels.iter().enumerate() {
                acc = acc + pinball_cell(tau, target[r] - tp.data()[r * q + j]);
            }
        }
        let loss = acc / T::of((count * q) as f64);
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Pinball {
                pred,
                target,
                weight,
                levels,
                count,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// wherever a value feeds several operations.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data: g,
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.shape()[1]);
                if self.needs(*a) {
                    let bt = transpose(tb.data(), k, n);
                    let mut da = vec![T::zero(); m * k];
                    gemm(&mut da, g, &bt, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let at = transpose(ta.data(), m, k);
                    let mut db = vec![T::zero(); k * n];
                    gemm(&mut db, &at, g, k, m, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.needs(*b) {
                    let c = self.value(*b).len();
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks(c) {
                        axpy(&mut db, T::one(), row);
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.iter().zip(tb.data()).map(|(&gi, &y)| gi * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = g.iter().zip(ta.data()).map(|(&gi, &x)| gi * x).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|&gi| gi * *c).collect());
            }
            Op::Silu(x) => {
                let tx = self.value(*x);
                let d = g
                    .iter()
                    .zip(tx.data())
                    .map(|(&gi, &v)| {
                        let s = sigmoid(v);
                        gi * (s + v * s * (T::one() - s))
                    })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let tg = self.value(*gain);
                let c = tg.len();
                let rows = rstd.len();
                if self.needs(*x) {
                    let inv_c = T::one() / T::of(c as f64);
                    let mut dx = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let gr = &g[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let dh = gr[j] * tg.data()[j];
                            m1 = m1 + dh;
                            m2 = m2 + dh * hr[j];
                        }
                        m1 = m1 * inv_c;
                        m2 = m2 * inv_c;
                        for j in 0..c {
                            let dh = gr[j] * tg.data()[j];
                            dx[r * c + j] = rstd[r] * (dh - m1 - hr[j] * m2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*gain) {
                    let mut dg = vec![T::zero(); c];
                    for r in 0..rows {
                        for j in 0..c {
                            dg[j] = dg[j] + g[r * c + j] * xhat[r * c + j];
                        }
                    }
                    self.accumulate(grads, *gain, dg);
                }
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks(c) {
                        axpy(&mut db, T::one(), row);
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![T::zero(); g.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let s = dot(yr, gr);
                    for j in 0..c {
                        dxr[j] = yr[j] * (gr[j] - s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Rope {
                x,
                cos,
                sin,
                n_heads,
            } => {
                let d = node.value.cols();
                let mut dx = g.to_vec();
                rotate(&mut dx, cos, sin, d, d / n_heads, true);
                self.accumulate(grads, *x, dx);
            }
            Op::Attention {
                q,
                k,
                v,
                seqs,
                n_heads,
                probs,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, d) = (tq.shape()[0], tq.shape()[1]);
                let hd = d / n_heads;
                let scale = T::one() / T::of(hd as f64).sqrt();
                let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
                let locals: Vec<[Vec<T>; 3]> = par::map_range(seqs.len(), |s| {
                    let seq = &seqs[s];
                    let l = seq.len();
                    let p = &probs[s];
                    let mut dq = vec![T::zero(); l * d];
                    let mut dk = vec![T::zero(); l * d];
                    let mut dv = vec![T::zero(); l * d];
                    let mut ds = vec![T::zero(); l];
                    for h in 0..*n_heads {
                        let off = h * hd;
                        let ph = &p[h * l * l..(h + 1) * l * l];
                        for (i, &ti) in seq.iter().enumerate() {
                            let gi = &g[ti * d + off..ti * d + off + hd];
                            let pr = &ph[i * l..(i + 1) * l];
                            for (j, &tj) in seq.iter().enumerate() {
                                ds[j] = dot(gi, &vd[tj * d + off..tj * d + off + hd]);
                                axpy(&mut dv[j * d + off..j * d + off + hd], pr[j], gi);
                            }
                            let s = dot(pr, &ds);
                            for j in 0..l {
                                ds[j] = pr[j] * (ds[j] - s) * scale;
                            }
                            let qi = &qd[ti * d + off..ti * d + off + hd];
                            for (j, &tj) in seq.iter().enumerate() {
                                axpy(
                                    &mut dq[i * d + off..i * d + off + hd],
                                    ds[j],
                                    &kd[tj * d + off..tj * d + off + hd],
                                );
                                axpy(&mut dk[j * d + off..j * d + off + hd], ds[j], qi);
                            }
                        }
                    }
                    [dq, dk, dv]
                });
                let mut full = [
                    vec![T::zero(); n * d],
                    vec![T::zero(); n * d],
                    vec![T::zero(); n * d],
                ];
                for (seq, local) in seqs.iter().zip(&locals) {
                    for (i, &ti) in seq.iter().enumerate() {
                        for (dst, src) in full.iter_mut().zip(local) {
                            dst[ti * d..(ti + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
                        }
                    }
                }
                let [dq, dk, dv] = full;
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::Gather { inputs, index } => {
                let c = node.value.cols();
                let mut parts: Vec<Option<Vec<T>>> = inputs
                    .iter()
                    .map(|&v| self.needs(v).then(|| vec![T::zero(); self.value(v).len()]))
                    .collect();
                for (r, &(src, row)) in index.iter().enumerate() {
                    if let Some(buf) = &mut parts[src] {
                        axpy(&mut buf[row * c..(row + 1) * c], T::one(), &g[r * c..(r + 1) * c]);
                    }
                }
                for (&v, part) in inputs.iter().zip(parts) {
                    if let Some(p) = part {
                        self.accumulate(grads, v, p);
                    }
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / T::of(n.max(1) as f64); n]);
            }
            Op::Pinball {
                pred,
                target,
                weight,
                levels,
                count,
            } => {
                let tp = self.value(*pred);
                let q = levels.len();
                let norm = g[0] / T::of((count * q) as f64);
                let mut dp = vec![T::zero(); tp.len()];
                for r in 0..target.len() {
                    if weight[r] == T::zero() {
                        continue;
                    }
                    for (j, &tau) in levels.iter().enumerate() {
                        let e = target[r] - tp.data()[r * q + j];
                        let de = if e > T::zero() { tau } else { tau - T::one() };
                        dp[r * q + j] = -de * norm;
                    }
                }
                self.accumulate(grads, *pred, dp);
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub(crate) fn pinball_cell<T: Real>(tau: T, e: T) -> T {
    (tau * e).max((tau - T::one()) * e)
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

fn rotate<T: Real>(data: &mut [T], cos: &[T], sin: &[T], d: usize, hd: usize, inverse: bool) {
    let half = hd / 2;
    for (r, row) in data.chunks_mut(d).enumerate() {
        let (c, s) = (&cos[r * half..(r + 1) * half], &sin[r * half..(r + 1) * half]);
        for head in row.chunks_mut(hd) {
            for i in 0..half {
                let (x0, x1) = (head[2 * i], head[2 * i + 1]);
                let sn = if inverse { -s[i] } else { s[i] };
                head[2 * i] = x0 * c[i] - x1 * sn;
                head[2 * i + 1] = x0 * sn + x1 * c[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_forced_values() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.leaf(t(&[2, 1], &[0., 1.]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
        assert_eq!(tape.shape(c), &[2, 1]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f64>::new();
        let eye = tape.leaf(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let m: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let mv = tape.leaf(t(&[3, 3], &m));
        let c = tape.matmul(eye, mv).unwrap();
        assert_eq!(tape.value(c).data(), &m[..]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn softmax_forced_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[3, 2], &[0.0, 3f64.ln(), 2.0, 2.0, 1e4, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-12 && (d[1] - 0.75).abs() < 1e-12);
        assert_eq!(d[2], 0.5);
        assert!(d[4].is_finite() && ((d[4] + d[5]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 4], &[3.0; 4]));
        let g = tape.leaf(t(&[4], &[1.0; 4]));
        let b = tape.leaf(t(&[4], &[0.0; 4]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_mean_matches_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 5], &[1., 9., -3., 4., 0.5, 7., 7.5, 8., -8., 2.]));
        let g = tape.leaf(t(&[5], &[1.0; 5]));
        let b = tape.leaf(t(&[5], &[0.3; 5]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for row in tape.value(y).data().chunks(5) {
            let m = row.iter().sum::<f64>() / 5.0;
            assert!((m - 0.3).abs() < 1e-5);
        }
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_unused_leaf_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let unused = tape.param(t(&[2], &[5.0, 6.0]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused, &[2]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn pinball_forced_values() {
        let mut tape = Tape::<f64>::new();
        let cases = [(0.5, 2.0, 1.0), (0.9, -1.0, 0.1), (0.9, 1.0, 0.9)];
        for (tau, e, want) in cases {
            let pred = tape.leaf(t(&[1, 1], &[0.0]));
            let l = tape
                .pinball(pred, Arc::from(vec![e]), Arc::from(vec![1.0]), Arc::from(vec![tau]))
                .unwrap();
            assert!((tape.value(l).item() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pinball_requires_observed_cells() {
        let mut tape = Tape::<f64>::new();
        let pred = tape.leaf(t(&[1, 1], &[0.0]));
        let r = tape.pinball(pred, Arc::from(vec![1.0]), Arc::from(vec![0.0]), Arc::from(vec![0.5]));
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn attention_rejects_overlapping_sequences() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3, 4]));
        let seqs = Arc::new(vec![vec![0, 1], vec![1, 2]]);
        assert!(tape.attention(x, x, x, seqs, 2).is_err());
    }
}
