//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node to the tape, so node order is a topological order
//! and backward is a single reverse sweep.

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Bmm { a: Var, b: Var, trans_b: bool },
    Binary { a: Var, b: Var, kind: Binary },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    Unary { a: Var, kind: Unary },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    SumAxis { a: Var, axis: usize, scale: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize, end: usize },
    Permute { a: Var, perm: Vec<usize> },
    Reshape { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, training: bool },
    Dropout { a: Var, mask: Vec<f64> },
    L2Normalize { a: Var, norms: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Conv1d { x: Var, w: Var, b: Var },
    MaxPool1d { a: Var, argmax: Vec<usize> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b } | Op::Bmm { a, b, .. } | Op::Binary { a, b, .. } => vec![*a, *b],
            Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Unary { a, .. }
            | Op::Softmax { a }
            | Op::LogSoftmax { a }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::SumAxis { a, .. }
            | Op::Slice { a, .. }
            | Op::Permute { a, .. }
            | Op::Reshape { a }
            | Op::Dropout { a, .. }
            | Op::L2Normalize { a, .. }
            | Op::MaxPool1d { a, .. } => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::LayerNorm { x, gamma, beta, .. } | Op::BatchNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Conv1d { x, w, b } => vec![*x, *w, *b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics mode for [`Graph::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel mean and population variance of a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-3;
/// Norm below which `l2_normalize` refuses its input.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a leaf. `None` when the leaf is not on any path.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// One gradient per parameter of `store`; zeros for parameters not on any path.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        for (id, v) in &self.params {
            if let Some(g) = self.wrt(*v) {
                out[id.index()] = g.clone();
            }
        }
        out
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_data(t: &Tensor, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    let r = shape.len();
    let mut in_strides = vec![1usize; r];
    for i in (0..r.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let new_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = t.len();
    let src = t.data();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(src[off]);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < new_shape[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&new_shape, out).expect("permute preserves element count")
}

/// Sum `g` (of length `big`) down to a suffix-broadcast operand of length `small`.
fn reduce_to(g: &[f64], small: usize) -> Vec<f64> {
    let mut out = vec![0.0; small];
    for chunk in g.chunks(small) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn im2col(x: &[f64], cin: usize, l: usize, k: usize, cols: &mut [f64]) {
    let pad = k / 2;
    for c in 0..cin {
        for j in 0..k {
            let row = &mut cols[(c * k + j) * l..(c * k + j + 1) * l];
            for (t, r) in row.iter_mut().enumerate() {
                let src = t as isize + j as isize - pad as isize;
                *r = if src >= 0 && (src as usize) < l {
                    x[c * l + src as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_add(cols: &[f64], cin: usize, l: usize, k: usize, dx: &mut [f64]) {
    let pad = k / 2;
    for c in 0..cin {
        for j in 0..k {
            let row = &cols[(c * k + j) * l..(c * k + j + 1) * l];
            for (t, r) in row.iter().enumerate() {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < l {
                    dx[c * l + src as usize] += r;
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A leaf that receives a gradient (used for gradient checks on inputs).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// The leaf holding parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.param_lookup.get(&id) {
            return *v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.params.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    /// Like [`param`](Self::param) but the leaf receives no gradient.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.param_lookup.get(&id) {
            return *v;
        }
        let v = self.leaf(store.get(id).clone(), false);
        self.param_lookup.insert(id, v);
        v
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numerics(format!("{name} produced a non-finite value")));
        }
        let needs_grad = op.inputs().iter().any(|v| self.needs(*v));
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a [.., k] x b [k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).len() / k.max(1);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push(Tensor::new(&shape, out)?, Op::MatMul { a, b }, "matmul")
    }

    /// Batched `a [B, m, k] x b [B, k, n]`, or `x b^T` with `b [B, n, k]` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bad = sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || {
            let kb = if trans_b { sb[2] } else { sb[1] };
            sa[2] != kb
        };
        if bad {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..],
                false,
                &db[i * k * n..],
                trans_b,
                &mut out[i * m * n..],
                0.0,
            );
        }
        self.push(Tensor::new(&[bs, m, n], out)?, Op::Bmm { a, b, trans_b }, "bmm")
    }

    /// `a x b^T` for rank-2 operands.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("matmul_nt", &sa, &sb));
        }
        let a3 = self.reshape(a, &[1, sa[0], sa[1]])?;
        let b3 = self.reshape(b, &[1, sb[0], sb[1]])?;
        let c = self.bmm(a3, b3, true)?;
        self.reshape(c, &[sa[0], sb[0]])
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary, name: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let a_big = sa.len() >= sb.len() && sa.ends_with(sb);
        let b_big = sb.len() >= sa.len() && sb.ends_with(sa);
        if !a_big && !b_big {
            return Err(Error::shape(name, sa, sb));
        }
        let shape = if a_big { sa.to_vec() } else { sb.to_vec() };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n = da.len().max(db.len());
        let (la, lb) = (da.len(), db.len());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out: Vec<f64> = if la == lb {
            da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect()
        } else {
            (0..n).map(|i| f(da[i % la], db[i % lb])).collect()
        };
        self.push(Tensor::new(&shape, out)?, Op::Binary { a, b, kind }, name)
    }

    /// Elementwise sum; either operand may broadcast over the other's leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale { a, c }, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar { a }, "add_scalar")
    }

    fn unary(&mut self, a: Var, kind: Unary, name: &'static str) -> Result<Var> {
        let v = self.value(a).map(|x| match kind {
            Unary::Relu => x.max(0.0),
            Unary::Gelu => gelu_parts(x).0,
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
        });
        self.push(v, Op::Unary { a, kind }, name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu, "relu")
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Gelu, "gelu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid, "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp, "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log, "log")
    }

    fn last_dim(&self, a: Var, name: &'static str) -> Result<usize> {
        match self.shape(a).last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(Error::shape(name, self.shape(a), &[])),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let d = self.last_dim(a, "softmax")?;
        let x = self.value(a);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let shape = x.shape().to_vec();
        self.push(Tensor::new(&shape, out)?, Op::Softmax { a }, "softmax")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let d = self.last_dim(a, "log_softmax")?;
        let x = self.value(a);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = x.shape().to_vec();
        self.push(Tensor::new(&shape, out)?, Op::LogSoftmax { a }, "log_softmax")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean", x.shape(), &[]));
        }
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean { a }, "mean")
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", &shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        self.push(Tensor::new(&new_shape, out)?, Op::SumAxis { a, axis, scale }, "sum_axis")
    }

    /// Sum over `axis`, which is removed.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    /// Mean over `axis`, which is removed.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let d = self.value(*p).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, end]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        self.push(
            Tensor::new(&new_shape, out)?,
            Op::Slice { a, axis, start, end },
            "slice",
        )
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape("permute", shape, perm));
        }
        let v = permute_data(self.value(a), perm);
        self.push(v, Op::Permute { a, perm: perm.to_vec() }, "permute")
    }

    /// Swap two axes.
    pub fn transpose(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let r = self.shape(a).len();
        if i >= r || j >= r {
            return Err(Error::shape("transpose", self.shape(a), &[i, j]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(i, j);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        self.push(v, Op::Reshape { a }, "reshape")
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of that width.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.last_dim(x, "layer_norm")?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Batch normalization over every axis except axis 1 (channels) of `x [N, C, ..]`.
    /// In training mode the batch statistics are returned so callers can update
    /// running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(gamma) != [shape[1]] || self.shape(beta) != [shape[1]] {
            return Err(Error::shape("batch_norm", &shape, self.shape(gamma)));
        }
        let (n, c, inner) = split_axis(&shape, 1);
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let count = (n * inner) as f64;
        let (mean, var, training) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let s = &xv[(i * c + ch) * inner..(i * c + ch + 1) * inner];
                        mean[ch] += s.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for i in 0..n {
                    for ch in 0..c {
                        let s = &xv[(i * c + ch) * inner..(i * c + ch + 1) * inner];
                        var[ch] += s.iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm", &shape, &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                for t in 0..inner {
                    let idx = (i * c + ch) * inner + t;
                    let h = (xv[idx] - mean[ch]) * inv_std[ch];
                    xhat[idx] = h;
                    out[idx] = h * g[ch] + b[ch];
                }
            }
        }
        let v = self.push(
            Tensor::new(&shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            "batch_norm",
        )?;
        Ok((v, training.then_some(BatchStats { mean, var })))
    }

    /// Inverted dropout; identity when `training` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let x = self.value(a);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = x.shape().to_vec();
        self.push(Tensor::new(&shape, out)?, Op::Dropout { a, mask }, "dropout")
    }

    /// Scale each last-axis row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let d = self.last_dim(a, "l2_normalize")?;
        let x = self.value(a);
        let mut out = x.data().to_vec();
        let mut norms = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(nrm > MIN_NORM) {
                return Err(Error::Numerics(format!(
                    "l2_normalize: row norm {nrm:e} is not above {MIN_NORM:e}"
                )));
            }
            row.iter_mut().for_each(|v| *v /= nrm);
            norms.push(nrm);
        }
        let shape = x.shape().to_vec();
        self.push(Tensor::new(&shape, out)?, Op::L2Normalize { a, norms }, "l2_normalize")
    }

    /// Cosine similarities `[n, m]` between rows of `a [n, d]` and `b [m, d]`.
    pub fn cosine_similarity_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let an = self.l2_normalize(a)?;
        let bn = self.l2_normalize(b)?;
        self.matmul_nt(an, bn)
    }

    /// Mean squared error, a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape("mse_loss", self.shape(pred), self.shape(target)));
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy_loss(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() || shape[0] == 0 {
            return Err(Error::shape("cross_entropy_loss", &shape, &[targets.len()]));
        }
        let k = shape[1];
        if let Some(t) = targets.iter().find(|t| **t >= k) {
            return Err(Error::Contract(format!("class index {t} out of range for {k} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(k).zip(targets) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let zt = row[t] - m;
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
            loss -= zt - s.ln();
        }
        loss /= targets.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "cross_entropy_loss",
        )
    }

    /// Same-padded, stride-1 convolution: `x [N, Cin, L]`, `w [Cout, Cin, K]` (`K` odd),
    /// `b [Cout]` -> `[N, Cout, L]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || sw[2] % 2 == 0 || self.shape(b) != [sw[0]] {
            return Err(Error::shape("conv1d", &sx, &sw));
        }
        let (n, cin, l) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut cols = vec![0.0; cin * k * l];
        let mut out = vec![0.0; n * cout * l];
        for i in 0..n {
            im2col(&xv[i * cin * l..(i + 1) * cin * l], cin, l, k, &mut cols);
            let o = &mut out[i * cout * l..(i + 1) * cout * l];
            for (ch, row) in o.chunks_mut(l).enumerate() {
                row.iter_mut().for_each(|v| *v = bv[ch]);
            }
            gemm(cout, cin * k, l, wv, false, &cols, false, o, 1.0);
        }
        self.push(Tensor::new(&[n, cout, l], out)?, Op::Conv1d { x, w, b }, "conv1d")
    }

    /// Non-overlapping max pooling of width 2 over the last axis of `[N, C, L]`.
    pub fn maxpool1d(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || s[2] < 2 {
            return Err(Error::shape("maxpool1d", &s, &[2]));
        }
        let (rows, l) = (s[0] * s[1], s[2]);
        let lo = l / 2;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(rows * lo);
        let mut argmax = Vec::with_capacity(rows * lo);
        for r in 0..rows {
            for t in 0..lo {
                let i = r * l + 2 * t;
                let j = if x[i + 1] > x[i] { i + 1 } else { i };
                out.push(x[j]);
                argmax.push(j);
            }
        }
        self.push(Tensor::new(&[s[0], s[1], lo], out)?, Op::MaxPool1d { a, argmax }, "maxpool1d")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&g) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(self.shape(v), g).expect("gradient matches value shape"));
            }
        }
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.len() / k.max(1);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv.data(), true, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, gd, false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = node.value.shape()[2];
                if self.needs(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for s in 0..bs {
                        // trans_b: dA = G B; else dA = G B^T.
                        gemm(
                            m,
                            n,
                            k,
                            &gd[s * m * n..],
                            false,
                            &bv.data()[s * k * n..],
                            !trans_b,
                            &mut da[s * m * k..],
                            0.0,
                        );
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for s in 0..bs {
                        if *trans_b {
                            // dB = G^T A, shape n x k.
                            gemm(n, m, k, &gd[s * m * n..], true, &av.data()[s * m * k..], false, &mut db[s * k * n..], 0.0);
                        } else {
                            // dB = A^T G, shape k x n.
                            gemm(k, m, n, &av.data()[s * m * k..], true, &gd[s * m * n..], false, &mut db[s * k * n..], 0.0);
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Binary { a, b, kind } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let (la, lb) = (av.len(), bv.len());
                let n = gd.len();
                if self.needs(*a) {
                    let full: Vec<f64> = match kind {
                        Binary::Add | Binary::Sub => gd.to_vec(),
                        Binary::Mul => (0..n).map(|j| gd[j] * bv[j % lb]).collect(),
                    };
                    let da = if la == n { full } else { reduce_to(&full, la) };
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let full: Vec<f64> = match kind {
                        Binary::Add => gd.to_vec(),
                        Binary::Sub => gd.iter().map(|v| -v).collect(),
                        Binary::Mul => (0..n).map(|j| gd[j] * av[j % la]).collect(),
                    };
                    let db = if lb == n { full } else { reduce_to(&full, lb) };
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale { a, c } => {
                self.accumulate(grads, *a, gd.iter().map(|v| v * c).collect());
            }
            Op::AddScalar { a } => self.accumulate(grads, *a, gd.to_vec()),
            Op::Unary { a, kind } => {
                let x = self.value(*a).data();
                let da = gd
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(g, (x, y))| {
                        g * match kind {
                            Unary::Relu => {
                                if *x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Gelu => gelu_parts(*x).1,
                            Unary::Tanh => 1.0 - y * y,
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::Exp => *y,
                            Unary::Log => 1.0 / x,
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Softmax { a } => {
                let d = *node.value.shape().last().unwrap();
                let mut da = vec![0.0; y.len()];
                for ((dr, yr), gr) in da.chunks_mut(d).zip(y.chunks(d)).zip(gd.chunks(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..d {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::LogSoftmax { a } => {
                let d = *node.value.shape().last().unwrap();
                let mut da = vec![0.0; y.len()];
                for ((dr, yr), gr) in da.chunks_mut(d).zip(y.chunks(d)).zip(gd.chunks(d)) {
                    let gs: f64 = gr.iter().sum();
                    for j in 0..d {
                        dr[j] = gr[j] - yr[j].exp() * gs;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Sum { a } => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean { a } => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0] / n as f64; n]);
            }
            Op::SumAxis { a, axis, scale } => {
                let (outer, len, inner) = split_axis(self.shape(*a), *axis);
                let mut da = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        for (d, s) in da[(o * len + j) * inner..(o * len + j + 1) * inner].iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Concat { parts, axis } => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.needs(*p) {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dp.extend_from_slice(&gd[base..base + len * inner]);
                        }
                        self.accumulate(grads, *p, dp);
                    }
                    offset += len;
                }
            }
            Op::Slice { a, axis, start, end } => {
                let (outer, len, inner) = split_axis(self.shape(*a), *axis);
                let w = end - start;
                let mut da = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    da[(o * len + start) * inner..(o * len + end) * inner]
                        .copy_from_slice(&gd[o * w * inner..(o + 1) * w * inner]);
                }
                self.accumulate(grads, *a, da);
            }
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, *a, permute_data(g, &inv).into_data());
            }
            Op::Reshape { a } => self.accumulate(grads, *a, gd.to_vec()),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *node.value.shape().last().unwrap();
                let gm = self.value(*gamma).data();
                if self.needs(*gamma) {
                    let mut dg = vec![0.0; d];
                    for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    self.accumulate(grads, *beta, reduce_to(gd, d));
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; gd.len()];
                    let df = d as f64;
                    for r in 0..gd.len() / d {
                        let gr = &gd[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            let dh = gr[j] * gm[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gm[j];
                            dx[r * d + j] = inv_std[r] / df * (df * dh - s1 - hr[j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let (n, c, inner) = split_axis(node.value.shape(), 1);
                let gm = self.value(*gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gh = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * inner;
                        for t in 0..inner {
                            sum_g[ch] += gd[base + t];
                            sum_gh[ch] += gd[base + t] * xhat[base + t];
                        }
                    }
                }
                if self.needs(*x) {
                    let m = (n * inner) as f64;
                    let mut dx = vec![0.0; gd.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * inner;
                            let k = gm[ch] * inv_std[ch];
                            for t in 0..inner {
                                let idx = base + t;
                                dx[idx] = if *training {
                                    k * (gd[idx] - sum_g[ch] / m - xhat[idx] * sum_gh[ch] / m)
                                } else {
                                    k * gd[idx]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, sum_gh);
                self.accumulate(grads, *beta, sum_g);
            }
            Op::Dropout { a, mask } => {
                self.accumulate(grads, *a, gd.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::L2Normalize { a, norms } => {
                let d = *node.value.shape().last().unwrap();
                let mut da = vec![0.0; gd.len()];
                for (r, nrm) in norms.iter().enumerate() {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..d {
                        da[r * d + j] = (gr[j] - yr[j] * dot) / nrm;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let k = self.shape(*logits)[1];
                let scale = gd[0] / targets.len() as f64;
                let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    dz[r * k + t] -= scale;
                }
                self.accumulate(grads, *logits, dz);
            }
            Op::Conv1d { x, w, b } => {
                let sx = self.shape(*x);
                let sw = self.shape(*w);
                let (n, cin, l) = (sx[0], sx[1], sx[2]);
                let (cout, k) = (sw[0], sw[2]);
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if self.needs(*b) {
                    let mut db = vec![0.0; cout];
                    for i in 0..n {
                        for ch in 0..cout {
                            let base = (i * cout + ch) * l;
                            db[ch] += gd[base..base + l].iter().sum::<f64>();
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
                let (nw, nx) = (self.needs(*w), self.needs(*x));
                let mut cols = vec![0.0; cin * k * l];
                let mut dw = vec![0.0; cout * cin * k];
                let mut dx = if nx { vec![0.0; n * cin * l] } else { vec![] };
                for i in 0..n {
                    let gi = &gd[i * cout * l..(i + 1) * cout * l];
                    if nw {
                        im2col(&xv[i * cin * l..(i + 1) * cin * l], cin, l, k, &mut cols);
                        gemm(cout, l, cin * k, gi, false, &cols, true, &mut dw, 1.0);
                    }
                    if nx {
                        gemm(cin * k, cout, l, wv, true, gi, false, &mut cols, 0.0);
                        col2im_add(&cols, cin, l, k, &mut dx[i * cin * l..(i + 1) * cin * l]);
                    }
                }
                if nw {
                    self.accumulate(grads, *w, dw);
                }
                if nx {
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::MaxPool1d { a, argmax } => {
                let mut da = vec![0.0; self.value(*a).len()];
                for (g, &j) in gd.iter().zip(argmax) {
                    da[j] += g;
                }
                self.accumulate(grads, *a, da);
            }
        }
    }
}
