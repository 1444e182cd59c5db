//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every forward operation appends a node holding its value and enough
//! context to run its vector-Jacobian product. A tape lives for one forward
//! pass; [`Tape::backward`] walks it in reverse and returns the gradient of a
//! scalar node with respect to every node that requires one. Gradients of a
//! node used several times accumulate additively.

use super::tensor::{matmul_kernel, matmul_nt_kernel, matmul_tn_kernel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Loss reduction over the labeled positions of a cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        src: Var,
        idx: Vec<usize>,
    },
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        src: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<Option<usize>>,
        probs: Vec<f64>,
        scale: f64,
    },
    CosineSqRows {
        u: Var,
        v: Var,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::shape(op, other, &[0, 0])),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v` into a fresh constant leaf; no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d("matmul", self.value(a))?;
        let (k2, n) = check_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let out = matmul_kernel(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = check_2d("transpose", self.value(a))?;
        let src = self.value(a).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let out = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `x[m×n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = check_2d("add_row", self.value(x))?;
        if self.value(b).len() != n {
            return Err(Error::shape(
                "add_row",
                self.value(x).shape(),
                self.value(b).shape(),
            ));
        }
        let bias = self.value(b).values();
        let mut out = self.value(x).values().to_vec();
        for r in 0..m {
            for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.values().iter().map(|v| v * c).collect())
            .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.values().iter().map(|v| f(*v)).collect())
            .expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), |v| {
            0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh())
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = check_2d("softmax_rows", self.value(x))?;
        let src = self.value(x).values();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::SoftmaxRows(x), rg))
    }

    /// Per-row standardisation followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = check_2d("layer_norm", self.value(x))?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape(
                "layer_norm",
                self.value(x).shape(),
                self.value(gain).shape(),
            ));
        }
        let src = self.value(x).values();
        let g = self.value(gain).values();
        let b = self.value(bias).values();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Selects rows of a 2-D tensor; doubles as embedding lookup.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = check_2d("gather_rows", self.value(src))?;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::shape("gather_rows", self.value(src).shape(), &[i]));
            }
            out.extend_from_slice(self.value(src).row(i));
        }
        let rg = self.rg(&[src]);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], out)?,
            Op::GatherRows {
                src,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = check_2d("slice_cols", self.value(src))?;
        if start + len > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, len]));
        }
        let s = self.value(src).values();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&s[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(&[src]);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols { src, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m, n) = check_2d("concat_cols", self.value(p))?;
            if *rows.get_or_insert(m) != m {
                return Err(Error::shape("concat_cols", &[rows.unwrap_or(0)], &[m]));
            }
            widths.push(n);
        }
        let m = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = check_2d("slice_rows", self.value(src))?;
        if start + len > m {
            return Err(Error::shape("slice_rows", &[m, n], &[start, len]));
        }
        let out = self.value(src).values()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[src]);
        Ok(self.push(Tensor::new(vec![len, n], out)?, Op::SliceRows { src, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mut cols = None;
        let mut m = 0;
        for &p in parts {
            let (r, n) = check_2d("concat_rows", self.value(p))?;
            if *cols.get_or_insert(n) != n {
                return Err(Error::shape("concat_rows", &[cols.unwrap_or(0)], &[n]));
            }
            m += r;
        }
        let n = cols.unwrap_or(0);
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).values());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.values().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Negative log-likelihood of `labels` under row-softmax of `logits`.
    /// `None` labels contribute neither loss nor gradient.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[Option<usize>],
        reduction: Reduction,
    ) -> Result<Var> {
        let (m, c) = check_2d("cross_entropy", self.value(logits))?;
        if labels.len() != m {
            return Err(Error::shape("cross_entropy", &[m, c], &[labels.len()]));
        }
        let count = labels.iter().filter(|l| l.is_some()).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let src = self.value(logits).values();
        let mut probs = vec![0.0; m * c];
        let mut total = 0.0;
        for (r, label) in labels.iter().enumerate() {
            let Some(label) = *label else { continue };
            if label >= c {
                return Err(Error::shape("cross_entropy", &[m, c], &[label]));
            }
            let row = &src[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[label];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let scale = match reduction {
            Reduction::Mean => 1.0 / count as f64,
            Reduction::Sum => 1.0,
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                scale,
            },
            rg,
        ))
    }

    /// Per-row squared cosine similarity `(u·v)² / ((‖u‖²+ε)(‖v‖²+ε))`.
    pub fn cosine_sq_rows(&mut self, u: Var, v: Var, eps: f64) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.shape() != tv.shape() {
            return Err(Error::shape("cosine_sq", tu.shape(), tv.shape()));
        }
        let (m, n) = tu.dims2();
        let mut out = Vec::with_capacity(m);
        for r in 0..m {
            let (a, b) = (&tu.values()[r * n..(r + 1) * n], &tv.values()[r * n..(r + 1) * n]);
            let (dot, nu, nv) = cos_parts(a, b, eps);
            out.push(dot * dot / (nu * nv));
        }
        let rg = self.rg(&[u, v]);
        Ok(self.push(Tensor::vector(out), Op::CosineSqRows { u, v, eps }, rg))
    }

    /// Gradient of the scalar `loss` with respect to every node that requires one.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.value(loss).shape(), &[1]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = node.value.dims2().1;
                if self.requires_grad(*a) {
                    let da = matmul_nt_kernel(g, self.value(*b).values(), m, n, k);
                    self.acc(grads, *a, |s| add_into(s, &da));
                }
                if self.requires_grad(*b) {
                    let db = matmul_tn_kernel(self.value(*a).values(), g, m, k, n);
                    self.acc(grads, *b, |s| add_into(s, &db));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2();
                self.acc(grads, *a, |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |s| add_into(s, g));
                self.acc(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |s| add_into(s, g));
                self.acc(grads, *b, |s| {
                    for (d, gv) in s.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                self.acc(grads, *a, |s| {
                    for ((d, gv), y) in s.iter_mut().zip(g).zip(vb) {
                        *d += gv * y;
                    }
                });
                self.acc(grads, *b, |s| {
                    for ((d, gv), x) in s.iter_mut().zip(g).zip(va) {
                        *d += gv * x;
                    }
                });
            }
            Op::AddRow(x, b) => {
                let n = self.value(*b).len();
                self.acc(grads, *x, |s| add_into(s, g));
                self.acc(grads, *b, |s| {
                    for row in g.chunks(n) {
                        add_into(s, row);
                    }
                });
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, |s| {
                    for (d, gv) in s.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).values();
                self.acc(grads, *x, |s| {
                    for ((d, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).values();
                self.acc(grads, *x, |s| {
                    for ((d, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *d += gv * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.values();
                self.acc(grads, *x, |s| {
                    for ((d, gv), yv) in s.iter_mut().zip(g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = node.value.dims2();
                let y = node.value.values();
                self.acc(grads, *x, |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gv), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gain).len();
                let gv = self.value(*gain).values();
                self.acc(grads, *x, |s| {
                    let nf = n as f64;
                    for (r, inv) in inv_std.iter().enumerate() {
                        let grow = &g[r * n..(r + 1) * n];
                        let hrow = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..n {
                            let dh = grow[j] * gv[j];
                            sum_d += dh;
                            sum_dh += dh * hrow[j];
                        }
                        for j in 0..n {
                            let dh = grow[j] * gv[j];
                            s[r * n + j] += inv / nf * (nf * dh - sum_d - hrow[j] * sum_dh);
                        }
                    }
                });
                self.acc(grads, *gain, |s| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            s[j] += grow[j] * hrow[j];
                        }
                    }
                });
                self.acc(grads, *bias, |s| {
                    for grow in g.chunks(n) {
                        add_into(s, grow);
                    }
                });
            }
            Op::GatherRows { src, idx: rows } => {
                let n = self.value(*src).dims2().1;
                self.acc(grads, *src, |s| {
                    for (k, &i) in rows.iter().enumerate() {
                        add_into(&mut s[i * n..(i + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                });
            }
            Op::SliceCols { src, start } => {
                let n = self.value(*src).dims2().1;
                let len = node.value.dims2().1;
                self.acc(grads, *src, |s| {
                    for (r, grow) in g.chunks(len).enumerate() {
                        add_into(&mut s[r * n + start..r * n + start + len], grow);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().1;
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).dims2().1;
                    self.acc(grads, *p, |s| {
                        for (r, srow) in s.chunks_mut(w).enumerate() {
                            add_into(srow, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceRows { src, start } => {
                let n = self.value(*src).dims2().1;
                self.acc(grads, *src, |s| {
                    add_into(&mut s[start * n..start * n + g.len()], g);
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    self.acc(grads, *p, |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Reshape(x) => self.acc(grads, *x, |s| add_into(s, g)),
            Op::Sum(x) => self.acc(grads, *x, |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                self.acc(grads, *x, |s| s.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                scale,
            } => {
                let c = self.value(*logits).dims2().1;
                self.acc(grads, *logits, |s| {
                    for (r, label) in labels.iter().enumerate() {
                        let Some(label) = *label else { continue };
                        for j in 0..c {
                            let target = if j == label { 1.0 } else { 0.0 };
                            s[r * c + j] += g[0] * scale * (probs[r * c + j] - target);
                        }
                    }
                });
            }
            Op::CosineSqRows { u, v, eps } => {
                let (tu, tv) = (self.value(*u), self.value(*v));
                let (m, n) = tu.dims2();
                let mut du = vec![0.0; m * n];
                let mut dv = vec![0.0; m * n];
                for r in 0..m {
                    let (a, b) = (&tu.values()[r * n..(r + 1) * n], &tv.values()[r * n..(r + 1) * n]);
                    let (dot, nu, nv) = cos_parts(a, b, *eps);
                    let f = dot * dot / (nu * nv);
                    for j in 0..n {
                        du[r * n + j] = g[r] * (2.0 * dot * b[j] / (nu * nv) - 2.0 * f * a[j] / nu);
                        dv[r * n + j] = g[r] * (2.0 * dot * a[j] / (nu * nv) - 2.0 * f * b[j] / nv);
                    }
                }
                self.acc(grads, *u, |s| add_into(s, &du));
                self.acc(grads, *v, |s| add_into(s, &dv));
            }
        }
        Ok(())
    }
}

fn cos_parts(a: &[f64], b: &[f64], eps: f64) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na + eps, nb + eps)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
