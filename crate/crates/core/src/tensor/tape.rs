use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::params::{Gradients, ParamId, Params};
use super::{dropout_mask, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Rows `offset..offset + len` of a packed matrix that form one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CrossEntropyOut {
    pub loss: Var,
    /// Number of rows that contributed (targets not equal to the ignore index).
    pub counted: usize,
    /// Every row was ignored; the loss is defined as zero.
    pub all_ignored: bool,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Sum(Var),
    Attention(AttentionSaved),
}

struct AttentionSaved {
    q: Var,
    k: Var,
    v: Var,
    spans: Vec<Span>,
    heads: usize,
    probs: Vec<f64>,
    drop: Option<Vec<f64>>,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations. Nodes are appended in
/// evaluation order, so every input id precedes its output id.
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new(), grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a stored parameter. Repeated calls return the same node so that
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(params.get(id).clone());
        self.params.insert(id, v);
        v
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Shape { op, lhs: s.to_vec(), rhs: vec![] }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.value(a), self.value(b)));
        }
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let out = kernels::transpose(self.value(x).data(), r, c);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Add a bias vector to every row (the only broadcast supported).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.numel() != c {
            return Err(shape_err("add_bias", tx, tb));
        }
        let out: Vec<f64> = tx.data().chunks(c).flat_map(|row| row.iter().zip(tb.data()).map(|(a, b)| a + b)).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let t = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect());
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x).softmax(axis)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax { x, axis }, rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.cols();
        if tg.numel() != d || tb.numel() != d {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let out = kernels::layer_norm(tx.data(), tg.data(), tb.data(), eps);
        let t = Tensor::from_parts(tx.shape().to_vec(), out.y);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat: out.xhat, inv_std: out.inv_std }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let tx = self.value(x);
        let t = Tensor::from_parts(tx.shape().to_vec(), tx.data().iter().map(|&v| f(v)).collect());
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, libm::tanh, Op::Tanh(x))
    }

    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        match dropout_mask(self.value(x).numel(), p, training, rng)? {
            None => Ok(x),
            Some(mask) => {
                let tx = self.value(x);
                let out = tx.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                let t = Tensor::from_parts(tx.shape().to_vec(), out);
                let rg = self.rg(x);
                Ok(self.push(t, Op::Dropout { x, mask }, rg))
            }
        }
    }

    /// Mean negative log-softmax over rows whose target is not `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[i64], ignore_index: Option<i64>) -> Result<CrossEntropyOut> {
        let (n, c) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::Shape { op: "cross_entropy", lhs: vec![n, c], rhs: vec![targets.len()] });
        }
        let mut resolved = Vec::with_capacity(n);
        for &t in targets {
            if Some(t) == ignore_index {
                resolved.push(None);
            } else if t < 0 || t as usize >= c {
                return Err(Error::Param(alloc::format!("target {t} outside [0, {c})")));
            } else {
                resolved.push(Some(t as usize));
            }
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        let mut count = 0;
        for (r, t) in resolved.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = &data[r * c..(r + 1) * c];
            total += kernels::nll(row, t);
            let pr = &mut probs[r * c..(r + 1) * c];
            pr.copy_from_slice(row);
            kernels::softmax_in_place(pr);
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits) && count > 0;
        let var = self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: resolved, probs, count }, rg);
        Ok(CrossEntropyOut { loss: var, counted: count, all_ignored: count == 0 })
    }

    /// Select rows by index (embedding lookup, CLS extraction, broadcasting).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        if tx.shape().len() != 2 {
            return Err(Error::Shape { op: "gather_rows", lhs: tx.shape().to_vec(), rhs: vec![] });
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::Lookup { index: i, size: r });
            }
            out.extend_from_slice(tx.row(i));
        }
        if rows.is_empty() {
            return Err(Error::Param("gather_rows with no rows".into()));
        }
        let t = Tensor::from_parts(vec![rows.len(), c], out);
        let rg = self.rg(x);
        Ok(self.push(t, Op::GatherRows { x, rows: rows.to_vec() }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Param("concat of nothing".into()))?;
        let rows = self.dims2(*first, "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", self.value(*first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![rows, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Param("concat of nothing".into()))?;
        let cols = self.dims2(*first, "concat_rows")?.1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(shape_err("concat_rows", self.value(*first), self.value(p)));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::Param(alloc::format!("column slice {start}..{end} invalid for width {c}")));
        }
        let w = end - start;
        let data = self.value(x).data();
        let out: Vec<f64> = (0..r).flat_map(|i| data[i * c + start..i * c + end].iter().copied()).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![r, w], out), Op::SliceCols { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[T×H]`; each span is attended independently and
    /// keys with `key_mask[row] == false` receive `-inf` scores. Probability
    /// dropout is applied when `training` and `p > 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        spans: &[Span],
        heads: usize,
        key_mask: &[bool],
        dropout_p: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Var> {
        let (t, h) = self.dims2(q, "attention")?;
        for other in [k, v] {
            if self.value(other).shape() != self.value(q).shape() {
                return Err(shape_err("attention", self.value(q), self.value(other)));
            }
        }
        if heads == 0 || h % heads != 0 {
            return Err(Error::Config(alloc::format!("hidden size {h} not divisible by {heads} heads")));
        }
        if key_mask.len() != t {
            return Err(Error::Shape { op: "attention", lhs: vec![t, h], rhs: vec![key_mask.len()] });
        }
        if spans.iter().any(|s| s.offset + s.len > t || s.len == 0) {
            return Err(Error::Param("attention span out of range".into()));
        }
        let dh = h / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut out = vec![0.0; t * h];
        let mut probs = Vec::new();
        let mut drop: Option<Vec<f64>> = None;
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for s in spans {
            let n = s.len;
            let mask = &key_mask[s.offset..s.offset + n];
            for head in 0..heads {
                let qh = kernels::head_slice(qd, h, s.offset, n, head, dh);
                let kh = kernels::head_slice(kd, h, s.offset, n, head, dh);
                let vh = kernels::head_slice(vd, h, s.offset, n, head, dh);
                let p = kernels::attention_probs(&qh, &kh, n, dh, scale, mask);
                let ctx = match dropout_mask(n * n, dropout_p, training, rng)? {
                    None => kernels::matmul(&p, &vh, n, n, dh),
                    Some(m) => {
                        let pd: Vec<f64> = p.iter().zip(&m).map(|(a, b)| a * b).collect();
                        drop.get_or_insert_with(Vec::new).extend_from_slice(&m);
                        kernels::matmul(&pd, &vh, n, n, dh)
                    }
                };
                for i in 0..n {
                    let dst = (s.offset + i) * h + head * dh;
                    out[dst..dst + dh].copy_from_slice(&ctx[i * dh..(i + 1) * dh]);
                }
                probs.extend_from_slice(&p);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let saved = AttentionSaved { q, k, v, spans: spans.to_vec(), heads, probs, drop };
        Ok(self.push(Tensor::from_parts(vec![t, h], out), Op::Attention(saved), rg))
    }

    /// Reverse-mode pass from a scalar `loss`, seeded with 1. A tape supports
    /// exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            backprop_node(&self.nodes, node, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.value(v).shape().to_vec(), g.clone()))
    }

    /// Gradients of every bound parameter. Parameters that did not reach the
    /// loss get an all-zero gradient.
    pub fn param_grads(&self, params: &Params) -> Gradients {
        let mut out = Gradients::new(params.len());
        for (&id, &v) in &self.params {
            let g = self.grad(v).unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            out.set(id, g);
        }
        out
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let rg = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).rows(), val(*a).cols());
            let n = val(*b).cols();
            if rg(*a) {
                accumulate(nodes, grads, *a, kernels::matmul_nt(g, val(*b).data(), m, n, k));
            }
            if rg(*b) {
                accumulate(nodes, grads, *b, kernels::matmul_tn(val(*a).data(), g, m, k, n));
            }
        }
        Op::MatMulNt(a, b) => {
            // C = A·Bᵀ, A: m×k, B: n×k
            let (m, k) = (val(*a).rows(), val(*a).cols());
            let n = val(*b).rows();
            if rg(*a) {
                accumulate(nodes, grads, *a, kernels::matmul(g, val(*b).data(), m, n, k));
            }
            if rg(*b) {
                accumulate(nodes, grads, *b, kernels::matmul_tn(g, val(*a).data(), m, n, k));
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (val(*x).rows(), val(*x).cols());
            accumulate(nodes, grads, *x, kernels::transpose(g, c, r));
        }
        Op::Add(a, b) => {
            if rg(*a) {
                accumulate(nodes, grads, *a, g.to_vec());
            }
            if rg(*b) {
                accumulate(nodes, grads, *b, g.to_vec());
            }
        }
        Op::AddBias(x, b) => {
            if rg(*x) {
                accumulate(nodes, grads, *x, g.to_vec());
            }
            if rg(*b) {
                let c = val(*b).numel();
                let mut gb = vec![0.0; c];
                for row in g.chunks(c) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                accumulate(nodes, grads, *a, g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect());
            }
            if rg(*b) {
                accumulate(nodes, grads, *b, g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect());
            }
        }
        Op::Scale(x, c) => accumulate(nodes, grads, *x, g.iter().map(|v| v * c).collect()),
        Op::Softmax { x, axis } => {
            let y = &node.value;
            let shape = y.shape();
            let outer: usize = shape[..*axis].iter().product();
            let len = shape[*axis];
            let inner: usize = shape[*axis + 1..].iter().product();
            let yd = y.data();
            let mut dx = vec![0.0; yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let dot: f64 = (0..len).map(|j| g[idx(j)] * yd[idx(j)]).sum();
                    for j in 0..len {
                        dx[idx(j)] = yd[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let gm = val(*gamma).data();
            let d = gm.len();
            if rg(*gamma) || rg(*beta) {
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for c in 0..d {
                        dg[c] += grow[c] * hrow[c];
                        db[c] += grow[c];
                    }
                }
                accumulate(nodes, grads, *gamma, dg);
                accumulate(nodes, grads, *beta, db);
            }
            if rg(*x) {
                let mut dx = vec![0.0; g.len()];
                for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let dxhat: Vec<f64> = grow.iter().zip(gm).map(|(a, b)| a * b).collect();
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(hrow).map(|(a, b)| a * b).sum();
                    let k = inv_std[r] / d as f64;
                    for c in 0..d {
                        dx[r * d + c] = k * (d as f64 * dxhat[c] - s1 - hrow[c] * s2);
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
        }
        Op::Gelu(x) => {
            let d = val(*x).data().iter().zip(g).map(|(&v, gv)| kernels::gelu_grad(v) * gv).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Relu(x) => {
            let d = val(*x).data().iter().zip(g).map(|(&v, gv)| if v > 0.0 { *gv } else { 0.0 }).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Tanh(x) => {
            let d = node.value.data().iter().zip(g).map(|(y, gv)| (1.0 - y * y) * gv).collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Dropout { x, mask } => {
            accumulate(nodes, grads, *x, g.iter().zip(mask).map(|(a, b)| a * b).collect());
        }
        Op::CrossEntropy { logits, targets, probs, count } => {
            let c = val(*logits).cols();
            let scale = g[0] / *count as f64;
            let mut d = vec![0.0; probs.len()];
            for (r, t) in targets.iter().enumerate() {
                let Some(t) = *t else { continue };
                for j in 0..c {
                    d[r * c + j] = probs[r * c + j] * scale;
                }
                d[r * c + t] -= scale;
            }
            accumulate(nodes, grads, *logits, d);
        }
        Op::GatherRows { x, rows } => {
            let c = val(*x).cols();
            let mut d = vec![0.0; val(*x).numel()];
            for (k, &r) in rows.iter().enumerate() {
                for j in 0..c {
                    d[r * c + j] += g[k * c + j];
                }
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::ConcatCols(parts) => {
            let rows = node.value.rows();
            let total = node.value.cols();
            let mut start = 0;
            for &p in parts {
                let w = val(p).cols();
                if rg(p) {
                    let d = (0..rows).flat_map(|r| g[r * total + start..r * total + start + w].iter().copied()).collect();
                    accumulate(nodes, grads, p, d);
                }
                start += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut start = 0;
            for &p in parts {
                let n = val(p).numel();
                if rg(p) {
                    accumulate(nodes, grads, p, g[start..start + n].to_vec());
                }
                start += n;
            }
        }
        Op::SliceCols { x, start } => {
            let c = val(*x).cols();
            let w = node.value.cols();
            let mut d = vec![0.0; val(*x).numel()];
            for (r, grow) in g.chunks(w).enumerate() {
                d[r * c + start..r * c + start + w].copy_from_slice(grow);
            }
            accumulate(nodes, grads, *x, d);
        }
        Op::Sum(x) => accumulate(nodes, grads, *x, vec![g[0]; val(*x).numel()]),
        Op::Attention(saved) => attention_backward(nodes, saved, g, grads),
    }
}

fn attention_backward(nodes: &[Node], s: &AttentionSaved, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let qt = &nodes[s.q.0].value;
    let (t, h) = (qt.rows(), qt.cols());
    let dh = h / s.heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let (qd, kd, vd) = (qt.data(), nodes[s.k.0].value.data(), nodes[s.v.0].value.data());
    let mut dq = vec![0.0; t * h];
    let mut dk = vec![0.0; t * h];
    let mut dv = vec![0.0; t * h];
    let mut cursor = 0;
    for span in &s.spans {
        let n = span.len;
        for head in 0..s.heads {
            let p = &s.probs[cursor..cursor + n * n];
            let mask = s.drop.as_ref().map(|m| &m[cursor..cursor + n * n]);
            cursor += n * n;
            let qh = kernels::head_slice(qd, h, span.offset, n, head, dh);
            let kh = kernels::head_slice(kd, h, span.offset, n, head, dh);
            let vh = kernels::head_slice(vd, h, span.offset, n, head, dh);
            let gh = kernels::head_slice(g, h, span.offset, n, head, dh);
            let pd: Vec<f64> = match mask {
                Some(m) => p.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => p.to_vec(),
            };
            let dvh = kernels::matmul_tn(&pd, &gh, n, n, dh);
            let mut dp = kernels::matmul_nt(&gh, &vh, n, dh, n);
            if let Some(m) = mask {
                for (a, b) in dp.iter_mut().zip(m) {
                    *a *= b;
                }
            }
            let mut ds = vec![0.0; n * n];
            for i in 0..n {
                let pr = &p[i * n..(i + 1) * n];
                let dr = &dp[i * n..(i + 1) * n];
                let dot: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    ds[i * n + j] = pr[j] * (dr[j] - dot) * scale;
                }
            }
            let dqh = kernels::matmul(&ds, &kh, n, n, dh);
            let dkh = kernels::matmul_tn(&ds, &qh, n, n, dh);
            for i in 0..n {
                let dst = (span.offset + i) * h + head * dh;
                for d in 0..dh {
                    dq[dst + d] += dqh[i * dh + d];
                    dk[dst + d] += dkh[i * dh + d];
                    dv[dst + d] += dvh[i * dh + d];
                }
            }
        }
    }
    accumulate(nodes, grads, s.q, dq);
    accumulate(nodes, grads, s.k, dk);
    accumulate(nodes, grads, s.v, dv);
}
