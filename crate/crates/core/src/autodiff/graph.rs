//! Arena-backed reverse-mode computation graph.
//!
//! Nodes are appended in creation order, which is already a topological
//! order, so `backward` walks the arena once from the loss towards index 0.
//! Every op checks shapes up front and returns [`Error::Shape`] on mismatch.

use std::sync::Arc;

use super::tensor::{dot, gemm_nt, gemm_tn, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    /// `x^β`, defined for `β > 0` and `x ≥ 0`.
    Power(f64),
    /// Tanh approximation of GELU.
    Gelu,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Min,
    Max,
}

/// Which keys each query row may attend to: a contiguous range plus an
/// optional global key that every row sees.
#[derive(Debug, Clone)]
pub struct AttentionSpans {
    ranges: Vec<(usize, usize)>,
    global_key: Option<usize>,
}

impl AttentionSpans {
    /// Every row attends to every key.
    pub fn full(n: usize) -> Self {
        Self {
            ranges: vec![(0, n); n],
            global_key: None,
        }
    }

    /// Block-diagonal attention: rows inside a block attend to that block only.
    pub fn blocks(lengths: &[usize]) -> Self {
        let mut ranges = Vec::with_capacity(lengths.iter().sum());
        let mut start = 0;
        for &len in lengths {
            for _ in 0..len {
                ranges.push((start, start + len));
            }
            start += len;
        }
        Self {
            ranges,
            global_key: None,
        }
    }

    /// Sliding window of width `window` (odd) over `n` positions where
    /// position 0 is a global token: it attends everywhere and every row
    /// attends to it.
    pub fn sliding_with_global(n: usize, window: usize) -> Self {
        let half = window / 2;
        let mut ranges = Vec::with_capacity(n);
        if n > 0 {
            ranges.push((0, n));
        }
        for i in 1..n {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            ranges.push((lo, hi));
        }
        Self {
            ranges,
            global_key: if n > 0 { Some(0) } else { None },
        }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    fn extra_global(&self, row: usize) -> Option<usize> {
        let (lo, hi) = self.ranges[row];
        self.global_key.filter(|g| *g < lo || *g >= hi)
    }

    /// Keys visible to `row`, ascending.
    pub fn keys(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        let (lo, hi) = self.ranges[row];
        self.extra_global(row).into_iter().chain(lo..hi)
    }

    pub fn key_count(&self, row: usize) -> usize {
        let (lo, hi) = self.ranges[row];
        hi - lo + usize::from(self.extra_global(row).is_some())
    }

    pub fn allows(&self, row: usize, key: usize) -> bool {
        let (lo, hi) = self.ranges[row];
        (lo..hi).contains(&key) || self.global_key == Some(key)
    }

    /// Dense boolean mask, row-major `n × n`.
    pub fn dense_mask(&self) -> Vec<bool> {
        let n = self.len();
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for j in self.keys(i) {
                mask[i * n + j] = true;
            }
        }
        mask
    }
}

/// Sparse per-head attention probabilities produced by [`Graph::attention`].
#[derive(Debug, Clone)]
pub struct AttentionMap {
    spans: Arc<AttentionSpans>,
    offsets: Vec<usize>,
    n_heads: usize,
    /// `[head][offset]`, each head holding `offsets[n]` entries.
    probs: Vec<f64>,
}

impl AttentionMap {
    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn n_rows(&self) -> usize {
        self.spans.len()
    }

    /// Dense attention row for one head and query position.
    pub fn row(&self, head: usize, row: usize) -> Vec<f64> {
        let n = self.n_rows();
        let per_head = self.offsets[n];
        let mut dense = vec![0.0; n];
        let base = head * per_head + self.offsets[row];
        for (slot, key) in self.spans.keys(row).enumerate() {
            dense[key] = self.probs[base + slot];
        }
        dense
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Activation(Var, Activation),
    Reduce {
        x: Var,
        kind: ReduceKind,
        outer: usize,
        len: usize,
        inner: usize,
        arg: Vec<usize>,
    },
    DivScalar(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        map: AttentionMap,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A computation graph with gradient storage.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    flops: u64,
}

const LAYER_NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Floating-point operations counted during forward construction.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`; zeros if nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let (m, k) = self.value(a).dims2()?;
        let n = out.shape()[1];
        self.flops += 2 * (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose2()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.flops += out.len() as u64;
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, n) = tx.dims2()?;
        if tb.shape() != [n] {
            return Err(shape_err("add_row_bias", tx.shape(), tb.shape()));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        self.flops += out.len() as u64;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.scale_inplace(s);
        self.flops += out.len() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Scale(x, s), rg))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v += c;
        }
        self.flops += out.len() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::AddConst(x), rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let tx = self.value(x);
        if let Activation::Power(beta) = kind {
            if !(beta > 0.0) {
                return Err(Error::Domain {
                    op: "power",
                    detail: format!("exponent must be > 0, got {beta}"),
                });
            }
            if let Some(bad) = tx.data().iter().find(|v| **v < 0.0) {
                return Err(Error::Domain {
                    op: "power",
                    detail: format!("negative input {bad}"),
                });
            }
        }
        let data = tx.data().iter().map(|&v| activate(kind, v)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        self.flops += 4 * out.len() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Activation(x, kind), rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn power(&mut self, x: Var, beta: f64) -> Result<Var> {
        self.activation(x, Activation::Power(beta))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Square)
    }

    /// Reduce along `axis`, or over every element when `axis` is `None`.
    /// Min and max send the gradient to the first extremal element only.
    pub fn reduce(&mut self, x: Var, kind: ReduceKind, axis: Option<usize>) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, tx.len(), 1, vec![]),
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::Axis { axis: ax, shape });
                }
                let outer = shape[..ax].iter().product();
                let inner = shape[ax + 1..].iter().product();
                let mut out_shape = shape.clone();
                out_shape.remove(ax);
                (outer, shape[ax], inner, out_shape)
            }
        };
        if len == 0 {
            return Err(Error::EmptyAxis { op: "reduce" });
        }
        let data = tx.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut arg = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let s: f64 = (0..len).map(|j| data[at(j)]).sum();
                        out.push(if kind == ReduceKind::Mean { s / len as f64 } else { s });
                    }
                    ReduceKind::Min | ReduceKind::Max => {
                        let mut best = at(0);
                        for j in 1..len {
                            let c = data[at(j)];
                            let better = if kind == ReduceKind::Min {
                                c < data[best]
                            } else {
                                c > data[best]
                            };
                            if better {
                                best = at(j);
                            }
                        }
                        out.push(data[best]);
                        arg.push(best);
                    }
                }
            }
        }
        self.flops += tx.len() as u64;
        let out = Tensor::new(out_shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                arg,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Sum, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Mean, None)
    }

    pub fn min(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Min, None)
    }

    pub fn max(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::Max, None)
    }

    /// `x / s` for a one-element `s`.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(shape_err("div_scalar", self.value(x).shape(), ts.shape()));
        }
        let d = ts.item();
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v /= d;
        }
        self.flops += out.len() as u64;
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::DivScalar(x, s), rg))
    }

    /// Row-wise softmax; entries where `mask` is false get probability 0.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(shape_err("softmax_rows", tx.shape(), &[mask.len()]));
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = tx.row(i);
            let ok = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let mx = (0..n)
                .filter(|&j| ok(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::Invalid(format!("softmax row {i} is fully masked")));
            }
            let mut z = 0.0;
            for j in 0..n {
                if ok(j) {
                    let e = (row[j] - mx).exp();
                    out[i * n + j] = e;
                    z += e;
                }
            }
            for v in &mut out[i * n..(i + 1) * n] {
                *v /= z;
            }
        }
        self.flops += 5 * (m * n) as u64;
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Per-row layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.shape() != [n] || tb.shape() != [n] {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = tx.row(i);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mu) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        self.flops += 8 * (m * n) as u64;
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
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

    /// Row lookup `table[ids]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, h) = tt.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { id, size: v });
            }
            out.extend_from_slice(tt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), h], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Stack matrices with equal column counts (or vectors) along axis 0.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat_rows of nothing".into()))?;
        let tail: Vec<usize> = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.ndim() == 0 || t.shape()[1..] != tail[..] {
                return Err(shape_err("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if start > end || end > n {
            return Err(shape_err("slice_cols", tx.shape(), &[start, end]));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&tx.row(i)[start..end]);
        }
        let out = Tensor::new(vec![m, w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2()?;
        if start > end || end > m {
            return Err(shape_err("slice_rows", tx.shape(), &[start, end]));
        }
        let out = Tensor::new(vec![end - start, n], tx.data()[start * n..end * n].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat_cols of nothing".into()))?;
        let (m, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if r != m {
                return Err(shape_err("concat_cols", self.shape(*first), self.shape(*p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor::new(vec![m, total], out)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Fused multi-head scaled dot-product attention over sparse spans.
    ///
    /// `q`, `k`, `v` are `n × h` with `h` divisible by `n_heads`; head `i`
    /// uses columns `i*h/n_heads .. (i+1)*h/n_heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize, spans: Arc<AttentionSpans>) -> Result<Var> {
        let (n, h) = self.value(q).dims2()?;
        for other in [k, v] {
            if self.shape(other) != [n, h] {
                return Err(shape_err("attention", &[n, h], self.shape(other)));
            }
        }
        if n_heads == 0 || h % n_heads != 0 {
            return Err(Error::Config(format!("width {h} is not divisible by {n_heads} heads")));
        }
        if spans.len() != n {
            return Err(shape_err("attention", &[n, h], &[spans.len()]));
        }
        let dh = h / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + spans.key_count(i));
        }
        let per_head = offsets[n];
        let mut probs = vec![0.0; per_head * n_heads];
        let mut out = vec![0.0; n * h];
        let (tq, tk, tv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut scores = Vec::new();
        for hd in 0..n_heads {
            let c0 = hd * dh;
            for i in 0..n {
                let qi = &tq[i * h + c0..i * h + c0 + dh];
                scores.clear();
                scores.extend(spans.keys(i).map(|j| dot(qi, &tk[j * h + c0..j * h + c0 + dh]) * scale));
                let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in &mut scores {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                let base = hd * per_head + offsets[i];
                let orow = &mut out[i * h + c0..i * h + c0 + dh];
                for (slot, j) in spans.keys(i).enumerate() {
                    let p = scores[slot] / z;
                    probs[base + slot] = p;
                    let vj = &tv[j * h + c0..j * h + c0 + dh];
                    for (o, x) in orow.iter_mut().zip(vj) {
                        *o += p * x;
                    }
                }
            }
        }
        self.flops += (4 * per_head * h + 5 * per_head * n_heads) as u64;
        let map = AttentionMap {
            spans,
            offsets,
            n_heads,
            probs,
        };
        let out = Tensor::new(vec![n, h], out)?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(out, Op::Attention { q, k, v, map, scale }, rg))
    }

    /// Attention probabilities recorded by an [`Graph::attention`] node.
    pub fn attention_map(&self, node: Var) -> Option<&AttentionMap> {
        match &self.nodes[node.0].op {
            Op::Attention { map, .. } => Some(map),
            _ => None,
        }
    }

    // ---- backward ----------------------------------------------------

    /// Backpropagates from a scalar `loss`, adding into every reachable
    /// node's gradient. A second call without [`Graph::zero_grad`] adds
    /// another copy of the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut tmp: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        tmp[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = tmp[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &g, &mut tmp)?;
            }
            match &mut self.grads[idx] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, tmp: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = tmp[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.shape(*b)[1];
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|ga| gemm_nt(gd, tb, ga, m, n, k));
                acc(*b, &|gb| gemm_tn(ta, gd, gb, k, m, n));
            }
            Op::Transpose(a) => {
                let t = g.transpose2()?;
                acc(*a, &|ga| add_into(ga, t.data()));
            }
            Op::Add(a, b) => {
                acc(*a, &|ga| add_into(ga, gd));
                acc(*b, &|gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| add_into(ga, gd));
                acc(*b, &|gb| {
                    for (o, x) in gb.iter_mut().zip(gd) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|ga| {
                    for ((o, x), y) in ga.iter_mut().zip(gd).zip(tb) {
                        *o += x * y;
                    }
                });
                acc(*b, &|gb| {
                    for ((o, x), y) in gb.iter_mut().zip(gd).zip(ta) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                let n = self.shape(*b)[0];
                acc(*x, &|gx| add_into(gx, gd));
                acc(*b, &|gb| {
                    for row in gd.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &|gx| {
                for (o, v) in gx.iter_mut().zip(gd) {
                    *o += s * v;
                }
            }),
            Op::AddConst(x) => acc(*x, &|gx| add_into(gx, gd)),
            Op::Activation(x, kind) => {
                let (tx, ty) = (self.value(*x).data(), node.value.data());
                acc(*x, &|gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * derivative(*kind, tx[i], ty[i]);
                    }
                });
            }
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                arg,
            } => acc(*x, &|gx| match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    let f = if *kind == ReduceKind::Mean {
                        1.0 / *len as f64
                    } else {
                        1.0
                    };
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let go = gd[o * inner + i] * f;
                            for j in 0..*len {
                                gx[(o * len + j) * inner + i] += go;
                            }
                        }
                    }
                }
                ReduceKind::Min | ReduceKind::Max => {
                    for (out_idx, &src) in arg.iter().enumerate() {
                        gx[src] += gd[out_idx];
                    }
                }
            }),
            Op::DivScalar(x, s) => {
                let d = self.value(*s).item();
                let ty = node.value.data();
                acc(*x, &|gx| {
                    for (o, v) in gx.iter_mut().zip(gd) {
                        *o += v / d;
                    }
                });
                acc(*s, &|gs| {
                    let dot_gy: f64 = gd.iter().zip(ty).map(|(a, b)| a * b).sum();
                    gs[0] -= dot_gy / d;
                });
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = node.value.dims2()?;
                let p = node.value.data();
                acc(*x, &|gx| {
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let s: f64 = dot(&gd[r.clone()], &p[r.clone()]);
                        for j in r {
                            gx[j] += p[j] * (gd[j] - s);
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
                let (m, n) = node.value.dims2()?;
                let tg = self.value(*gain).data();
                acc(*x, &|gx| {
                    let mut dxh = vec![0.0; n];
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        for j in 0..n {
                            dxh[j] = gd[i * n + j] * tg[j];
                        }
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dot(&dxh, &xhat[r.clone()]);
                        let f = inv_std[i] / n as f64;
                        for j in 0..n {
                            gx[i * n + j] += f * (n as f64 * dxh[j] - s1 - xhat[i * n + j] * s2);
                        }
                    }
                });
                acc(*gain, &|gg| {
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += gd[i * n + j] * xhat[i * n + j];
                        }
                    }
                });
                acc(*bias, &|gb| {
                    for row in gd.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let h = self.shape(*table)[1];
                acc(*table, &|gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * h..(id + 1) * h], &gd[r * h..(r + 1) * h]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let seg = &gd[off..off + len];
                    acc(*p, &|gp| add_into(gp, seg));
                    off += len;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, w) = node.value.dims2()?;
                let n = self.shape(*x)[1];
                acc(*x, &|gx| {
                    for i in 0..m {
                        add_into(&mut gx[i * n + start..i * n + start + w], &gd[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let n = self.shape(*x)[1];
                acc(*x, &|gx| add_into(&mut gx[start * n..start * n + gd.len()], gd));
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2()?;
                let mut c0 = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    acc(*p, &|gp| {
                        for i in 0..m {
                            add_into(&mut gp[i * w..(i + 1) * w], &gd[i * total + c0..i * total + c0 + w]);
                        }
                    });
                    c0 += w;
                }
            }
            Op::Reshape(x) => acc(*x, &|gx| add_into(gx, gd)),
            Op::Attention { q, k, v, map, scale } => {
                let (n, h) = node.value.dims2()?;
                let dh = h / map.n_heads;
                let per_head = map.offsets[n];
                let (tq, tk, tv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; n * h];
                let mut dk = vec![0.0; n * h];
                let mut dv = vec![0.0; n * h];
                let mut dp = Vec::new();
                for hd in 0..map.n_heads {
                    let c0 = hd * dh;
                    for i in 0..n {
                        let go = &gd[i * h + c0..i * h + c0 + dh];
                        let base = hd * per_head + map.offsets[i];
                        let p = &map.probs[base..base + map.spans.key_count(i)];
                        dp.clear();
                        let mut s = 0.0;
                        for (slot, j) in map.spans.keys(i).enumerate() {
                            let d = dot(go, &tv[j * h + c0..j * h + c0 + dh]);
                            s += p[slot] * d;
                            dp.push(d);
                            for (o, x) in dv[j * h + c0..j * h + c0 + dh].iter_mut().zip(go) {
                                *o += p[slot] * x;
                            }
                        }
                        let qi = &tq[i * h + c0..i * h + c0 + dh];
                        for (slot, j) in map.spans.keys(i).enumerate() {
                            let ds = p[slot] * (dp[slot] - s) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let kj = &tk[j * h + c0..j * h + c0 + dh];
                            for (o, x) in dq[i * h + c0..i * h + c0 + dh].iter_mut().zip(kj) {
                                *o += ds * x;
                            }
                            for (o, x) in dk[j * h + c0..j * h + c0 + dh].iter_mut().zip(qi) {
                                *o += ds * x;
                            }
                        }
                    }
                }
                acc(*q, &|g| add_into(g, &dq));
                acc(*k, &|g| add_into(g, &dk));
                acc(*v, &|g| add_into(g, &dv));
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => sigmoid(x),
        Activation::Power(beta) => x.powf(beta),
        Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
        Activation::Square => x * x,
    }
}

fn derivative(kind: Activation, x: f64, y: f64) -> f64 {
    match kind {
        Activation::Tanh => 1.0 - y * y,
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Power(beta) => {
            if beta == 1.0 {
                1.0
            } else if x == 0.0 {
                if beta > 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                beta * x.powf(beta - 1.0)
            }
        }
        Activation::Gelu => {
            let u = GELU_C * (x + 0.044715 * x * x * x);
            let t = u.tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        }
        Activation::Square => 2.0 * x,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
