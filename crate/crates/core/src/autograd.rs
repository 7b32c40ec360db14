//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse. Broadcasting is limited to two rules: equal shapes, or one side
//! holding a single element.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
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
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Dropout(Var, Vec<f64>),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    backward_done: bool,
}

const LN_EPS: f64 = 1e-5;

fn binary_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::dim(format!(
            "{what}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

/// Reads element `i` of a tensor that is either full-size or scalar.
#[inline]
fn bcast(t: &[f64], i: usize) -> f64 {
    if t.len() == 1 {
        t[0]
    } else {
        t[i]
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

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(!value.requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t.detached(), Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = t.detached();
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient regardless of the tensor's own flag.
    pub fn input(&mut self, t: Tensor) -> Var {
        let t = t.detached();
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter into this graph (once per graph).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id));
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let out = transpose_raw(self.value(a).data(), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = binary_shape(self.value(a), self.value(b), what)?;
        let n: usize = shape.iter().product();
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let out = (0..n).map(|i| f(bcast(ad, i), bcast(bd, i))).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x * c).collect();
        let t = Tensor::new(t.shape().to_vec(), out).unwrap();
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// `x[n × d] + b[d]`, adding `b` to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(b).len() != d {
            return Err(Error::dim(format!(
                "add_row: {:?} + row {:?}",
                self.value(x).shape(),
                self.value(b).shape()
            )));
        }
        let (xd, bd) = (self.value(x).data(), self.value(b).data());
        let out = (0..n * d).map(|i| xd[i] + bd[i % d]).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(x, b), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(t.shape().to_vec(), out).unwrap();
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    /// Inverted dropout. Identity when `!train` or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        let t = self.value(a);
        let out = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Dropout(a, mask), rg))
    }

    /// Softmax along `axis`. `mask`, when given, is added before
    /// normalization; `-inf` entries (in `mask` or in the input) produce an
    /// output of exactly zero.
    pub fn softmax(&mut self, x: Var, axis: usize, mask: Option<&Tensor>) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} on shape {shape:?}")));
        }
        if let Some(m) = mask {
            if m.shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "softmax mask {:?} vs input {shape:?}",
                    m.shape()
                )));
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = t.data();
        if xd.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric("softmax input is NaN or +inf".into()));
        }
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let logit = |j: usize| {
                    let v = xd[idx(j)];
                    match mask {
                        Some(m) => v + m.data()[idx(j)],
                        None => v,
                    }
                };
                let max = (0..len).map(logit).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    let open = mask.is_some_and(|m| (0..len).any(|j| m.data()[idx(j)] != f64::NEG_INFINITY));
                    if open {
                        return Err(Error::Numeric("softmax logits overflowed to -inf".into()));
                    }
                    return Err(Error::InvalidMask);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let l = logit(j);
                    let e = if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() };
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Softmax { x, outer, len, inner },
            rg,
        ))
    }

    /// Row-wise layer normalization of `x[n × d]` with affine `gamma`, `beta` of width `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::dim(format!(
                "layer_norm: width {d} vs gamma {:?} / beta {:?}",
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let xd = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let (_, d) = self.value(*first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != d {
                return Err(Error::dim(format!("concat_rows: width {c} vs {d}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, d], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let (n, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != n {
                return Err(Error::dim(format!("concat_cols: {r} rows vs {n}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..n {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![n, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if len == 0 || start + len > d {
            return Err(Error::dim(format!("slice_cols {start}..{} of width {d}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, len], out)?, Op::SliceCols { x, start }, rg))
    }

    /// Gathers rows `idx` (repeats allowed) of `x[n × d]`.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::dim(format!("select_rows {idx:?} of {n} rows")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![idx.len(), d], out)?,
            Op::SelectRows(x, idx.to_vec()),
            rg,
        ))
    }

    /// Column means of `x[n × d]` as a `[1 × d]` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, d], out)?, Op::MeanRows(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    // ---- backward ----

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that requires them. A second call without [`Graph::reset_grads`] is a
    /// contract error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract("backward already ran on this graph; reset first"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if !self.rg(loss) {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Clears computed gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Adds the gradients of bound parameters into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            let Some(g) = self.grad(v) else { continue };
            let t = store.get_mut(id);
            if !t.requires_grad {
                continue;
            }
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => t.grad = Some(g.to_vec()),
            }
        }
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        // Reduces a full-size gradient onto an operand that may be scalar.
        let reduce = |v: Var, full: Vec<f64>| -> Vec<f64> {
            if self.nodes[v.0].value.len() == 1 && full.len() != 1 {
                vec![full.iter().sum()]
            } else {
                full
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let (_, n) = self.nodes[b.0].value.dims2().unwrap();
                if self.rg(*a) {
                    let bt = transpose_raw(val(*b), k, n);
                    send(*a, matmul_raw(g, &bt, m, n, k));
                }
                if self.rg(*b) {
                    let at = transpose_raw(val(*a), m, k);
                    send(*b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                send(*a, transpose_raw(g, c, r));
            }
            Op::Add(a, b) => {
                send(*a, reduce(*a, g.to_vec()));
                send(*b, reduce(*b, g.to_vec()));
            }
            Op::Sub(a, b) => {
                send(*a, reduce(*a, g.to_vec()));
                send(*b, reduce(*b, g.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                if self.rg(*a) {
                    let full = g.iter().enumerate().map(|(i, gi)| gi * bcast(bd, i)).collect();
                    send(*a, reduce(*a, full));
                }
                if self.rg(*b) {
                    let full = g.iter().enumerate().map(|(i, gi)| gi * bcast(ad, i)).collect();
                    send(*b, reduce(*b, full));
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|x| x * c).collect()),
            Op::AddRow(x, b) => {
                send(*x, g.to_vec());
                if self.rg(*b) {
                    let d = self.nodes[b.0].value.len();
                    let mut gb = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % d] += gi;
                    }
                    send(*b, gb);
                }
            }
            Op::Relu(a) => {
                let ad = val(*a);
                send(*a, g.iter().zip(ad).map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 }).collect());
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                send(*a, g.iter().zip(y).map(|(gi, y)| gi * y * (1.0 - y)).collect());
            }
            Op::Softplus(a) => {
                let ad = val(*a);
                send(*a, g.iter().zip(ad).map(|(gi, x)| gi * sigmoid(*x)).collect());
            }
            Op::Dropout(a, mask) => send(*a, g.iter().zip(mask).map(|(gi, m)| gi * m).collect()),
            Op::Softmax { x, outer, len, inner } => {
                let y = node.value.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..*len).map(|j| y[idx(j)] * g[idx(j)]).sum();
                        for j in 0..*len {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                send(*x, gx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = self.nodes[gamma.0].value.len();
                let n = inv_std.len();
                let gm = val(*gamma);
                if self.rg(*x) {
                    let mut gx = vec![0.0; n * d];
                    for r in 0..n {
                        let dh: Vec<f64> = (0..d).map(|c| g[r * d + c] * gm[c]).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h =
                            (0..d).map(|c| dh[c] * xhat[r * d + c]).sum::<f64>() / d as f64;
                        for c in 0..d {
                            gx[r * d + c] =
                                inv_std[r] * (dh[c] - mean_dh - xhat[r * d + c] * mean_dh_h);
                        }
                    }
                    send(*x, gx);
                }
                if self.rg(*gamma) {
                    let mut gg = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        gg[i % d] += gi * xhat[i];
                    }
                    send(*gamma, gg);
                }
                if self.rg(*beta) {
                    let mut gb = vec![0.0; d];
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % d] += gi;
                    }
                    send(*beta, gb);
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                send(*a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    send(*p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2().unwrap();
                let mut off = 0;
                for p in parts {
                    let (_, w) = self.nodes[p.0].value.dims2().unwrap();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + off..r * total + off + w]);
                    }
                    send(*p, gp);
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, d) = self.nodes[x.0].value.dims2().unwrap();
                let (_, len) = node.value.dims2().unwrap();
                let mut gx = vec![0.0; n * d];
                for r in 0..n {
                    gx[r * d + start..r * d + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                send(*x, gx);
            }
            Op::SelectRows(x, idx) => {
                let (n, d) = self.nodes[x.0].value.dims2().unwrap();
                let mut gx = vec![0.0; n * d];
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        gx[i * d + c] += g[k * d + c];
                    }
                }
                send(*x, gx);
            }
            Op::MeanRows(x) => {
                let (n, d) = self.nodes[x.0].value.dims2().unwrap();
                let mut gx = vec![0.0; n * d];
                for r in 0..n {
                    for c in 0..d {
                        gx[r * d + c] = g[c] / n as f64;
                    }
                }
                send(*x, gx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
        }
    }
}

/// Additive attention mask: `0` where `keep[j]`, `-inf` elsewhere, repeated
/// over `rows` query rows.
pub fn key_mask(rows: usize, keep: &[bool]) -> Tensor {
    let row: Vec<f64> = keep
        .iter()
        .map(|&k| if k { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let data = row.iter().copied().cycle().take(rows * keep.len()).collect();
    Tensor::new(vec![rows, keep.len()], data).expect("non-empty mask")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_scalar_product() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = g.constant(Tensor::row(vec![1.0, 2.0]));
        let b = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn matmul_sum_gradient_is_column_sums() {
        let mut rng = Rng::new(11);
        let mut g = Graph::new();
        let a = g.input(Tensor::randn(&[3, 4], 1.0, &mut rng));
        let bt = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let b = g.constant(bt.clone());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        let row_sums: Vec<f64> = (0..4).map(|p| bt.at(p, 0) + bt.at(p, 1)).collect();
        let ga = g.grad(a).unwrap();
        for r in 0..3 {
            assert!(close(&ga[r * 4..r * 4 + 4], &row_sums, 1e-12));
        }
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).data(), &[0.5]);
        let mut rng = Rng::new(1);
        let d = g.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(d, x);
        let d = g.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(d, x);
    }

    #[test]
    fn dropout_zeroes_and_rescales() {
        let mut rng = Rng::new(5);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[10_000], 1.0));
        let d = g.dropout(x, 0.25, true, &mut rng).unwrap();
        let v = g.value(d).data();
        assert!(v.iter().all(|&e| e == 0.0 || (e - 1.0 / 0.75).abs() < 1e-15));
        let zeros = v.iter().filter(|&&e| e == 0.0).count() as f64 / v.len() as f64;
        assert!((zeros - 0.25).abs() < 0.02, "{zeros}");
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn incompatible_broadcast_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
        let s = g.constant(Tensor::scalar(2.0));
        let m = g.mul(a, s).unwrap();
        assert_eq!(g.value(m).shape(), &[2, 3]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = g.softmax(x, 0, None).unwrap();
        assert!(close(g.value(y).data(), &[1.0 / 3.0; 3], 1e-15));

        let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let y = g.softmax(x, 0, None).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);

        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.softmax(x, 0, None).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let expect: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
        assert!(close(g.value(y).data(), &expect, 1e-12));
    }

    #[test]
    fn softmax_masking() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![5.0, 1.0, 0.0]]).unwrap());
        let m = key_mask(2, &[true, false, true]);
        let y = g.softmax(x, 1, Some(&m)).unwrap();
        let v = g.value(y);
        for r in 0..2 {
            assert_eq!(v.at(r, 1), 0.0);
            assert!((v.at(r, 0) + v.at(r, 2) - 1.0).abs() <= 1e-12);
        }
        let all = key_mask(2, &[false, false, false]);
        assert!(matches!(g.softmax(x, 1, Some(&all)), Err(Error::InvalidMask)));
        let x = g.constant(Tensor::vector(vec![f64::NEG_INFINITY, 1.0]));
        let y = g.softmax(x, 0, None).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_axis_zero_on_matrix() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap());
        let y = g.softmax(x, 0, None).unwrap();
        let v = g.value(y);
        assert!((v.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((v.at(0, 1) + v.at(1, 1) - 1.0).abs() < 1e-15);
        assert!(g.softmax(x, 2, None).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 3, 2]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 12]);
    }

    #[test]
    fn backward_contracts() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
        g.reset_grads();
        g.backward(s).unwrap();
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let c = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0]);
        assert!(g.grad(c).is_none());
    }
}
