//! Tape-based reverse-mode differentiation.
//!
//! Every primitive evaluates eagerly and appends a node to the tape. Nodes only
//! refer to earlier nodes, so walking the tape backwards is a valid reverse
//! topological order. `backward` consumes the recorded graph and leaves the
//! tape empty for the next batch.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::params::GradMap;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// The primitive set reachable through [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    /// Elementwise with numpy-style broadcasting.
    Add,
    /// Elementwise with numpy-style broadcasting.
    Mul,
    /// Concatenation along the last axis; leading dimensions must agree.
    Concat,
    Tanh,
    Sigmoid,
    Relu,
    /// Softmax over the last axis.
    Softmax,
    /// Inputs: `[table [V, E], indices]`, indices given as integral values.
    EmbeddingLookup,
    /// Sum of all elements, shape `[1]`.
    Sum,
    /// Mean of all elements, shape `[1]`.
    Mean,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Concat => "concat",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::Softmax => "softmax",
            Primitive::EmbeddingLookup => "embedding_lookup",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Embedding { table: Var, indices: Vec<usize> },
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf; it receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    /// Records a named trainable leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, name: &str, tensor: &Tensor) -> Var {
        let mut value = tensor.clone();
        value.set_requires_grad(true);
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.to_string());
        v
    }

    /// Generic entry point over the primitive set.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::Invalid(format!(
                    "{} expects {n} inputs, got {}",
                    kind.name(),
                    inputs.len()
                )))
            }
        };
        match kind {
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::Concat => self.concat(inputs),
            Primitive::Tanh => {
                arity(1)?;
                Ok(self.tanh(inputs[0]))
            }
            Primitive::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            Primitive::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            Primitive::Softmax => {
                arity(1)?;
                Ok(self.softmax(inputs[0]))
            }
            Primitive::EmbeddingLookup => {
                arity(2)?;
                let raw = self.value(inputs[1]).data();
                let mut indices = Vec::with_capacity(raw.len());
                for &x in raw {
                    if x < 0.0 || x.fract() != 0.0 || !x.is_finite() {
                        return Err(Error::Invalid(format!(
                            "embedding_lookup: index {x} is not a non-negative integer"
                        )));
                    }
                    indices.push(x as usize);
                }
                self.embedding(inputs[0], &indices)
            }
            Primitive::Sum => {
                arity(1)?;
                Ok(self.sum(inputs[0]))
            }
            Primitive::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                shapes: vec![sa.to_vec(), sb.to_vec()],
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            0.0,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            needs,
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| Error::Shape {
            op: name,
            shapes: vec![ta.shape().to_vec(), tb.shape().to_vec()],
        })?;
        let data = if ta.shape() == tb.shape() {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let ma = index_map(ta.shape(), &out_shape);
            let mb = index_map(tb.shape(), &out_shape);
            let (da, db) = (ta.data(), tb.data());
            (0..ma.len().max(mb.len()))
                .map(|i| f(da[pick(&ma, i)], db[pick(&mb, i)]))
                .collect()
        };
        let needs = self.needs(a) || self.needs(b);
        Ok((Tensor::from_parts(out_shape, data), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect());
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, c), needs)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Invalid("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    shapes: parts.iter().map(|&q| self.shape(q).to_vec()).collect(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat(parts.to_vec()),
            needs,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64) -> (Tensor, bool) {
        let t = self.value(x);
        (
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()),
            self.needs(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (t, n) = self.unary(x, f64::tanh);
        self.push(t, Op::Tanh(x), n)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (t, n) = self.unary(x, sigmoid);
        self.push(t, Op::Sigmoid(x), n)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (t, n) = self.unary(x, |v| if v > 0.0 { v } else { 0.0 });
        self.push(t, Op::Relu(x), n)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = *t.shape().last().unwrap();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let t = Tensor::from_parts(t.shape().to_vec(), out);
        let n = self.needs(x);
        self.push(t, Op::Softmax(x), n)
    }

    /// Gathers rows of `table` (`[V, E]`), giving `[indices.len(), E]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || indices.is_empty() {
            return Err(Error::Shape {
                op: "embedding_lookup",
                shapes: vec![s, vec![indices.len()]],
            });
        }
        let (vocab, dim) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::Invalid(format!(
                "embedding_lookup: index {bad} out of range for table of {vocab} rows"
            )));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::from_parts(vec![indices.len(), dim], out),
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let n = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), n)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let n = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), n)
    }

    /// Sums over `axis`, removing it. A rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: "sum_axis",
                shapes: vec![shape, vec![axis]],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let n = self.needs(x);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::SumAxis(x, axis), n))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                shapes: vec![t.shape().to_vec(), shape.to_vec()],
            });
        }
        let out = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        let n = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), n))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    ///
    /// `logits` is `[K]` (one target) or `[B, K]` (one target per row). The
    /// computation goes through log-sum-exp so saturated logits stay finite.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let classes = *t.shape().last().unwrap();
        let rows = t.len() / classes;
        if t.shape().len() > 2 || rows != targets.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                shapes: vec![t.shape().to_vec(), vec![targets.len()]],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= classes) {
            return Err(Error::TargetOutOfRange {
                target: bad,
                classes,
            });
        }
        let mut probs = t.data().to_vec();
        let mut total = 0.0;
        for (row, &y) in probs.chunks_mut(classes).zip(targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
            for z in row.iter_mut() {
                *z = (*z - lse).exp();
            }
        }
        let loss = total / rows as f64;
        let n = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            n,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Returns the gradient of every named parameter recorded on the tape
    /// (zeros for parameters the loss does not reach) and clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<GradMap> {
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if nodes[a.0].needs_grad {
                        let ga = slot(&mut grads, &nodes, *a);
                        // dA = dC · Bᵀ
                        gemm(m, n, k, &g, (n, 1), tb.data(), (1, n), ga, 1.0);
                    }
                    if nodes[b.0].needs_grad {
                        let gb = slot(&mut grads, &nodes, *b);
                        // dB = Aᵀ · dC
                        gemm(k, m, n, ta.data(), (1, k), &g, (n, 1), gb, 1.0);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let out_shape = node.value.shape();
                    if nodes[a.0].needs_grad {
                        let map = index_map(nodes[a.0].value.shape(), out_shape);
                        let ga = slot(&mut grads, &nodes, *a);
                        for (j, gv) in g.iter().enumerate() {
                            ga[pick(&map, j)] += gv;
                        }
                    }
                    if nodes[b.0].needs_grad {
                        let map = index_map(nodes[b.0].value.shape(), out_shape);
                        let gb = slot(&mut grads, &nodes, *b);
                        for (j, gv) in g.iter().enumerate() {
                            gb[pick(&map, j)] += sign * gv;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let out_shape = node.value.shape();
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let ma = index_map(ta.shape(), out_shape);
                    let mb = index_map(tb.shape(), out_shape);
                    if nodes[a.0].needs_grad {
                        let ga = slot(&mut grads, &nodes, *a);
                        for (j, gv) in g.iter().enumerate() {
                            ga[pick(&ma, j)] += gv * tb.data()[pick(&mb, j)];
                        }
                    }
                    if nodes[b.0].needs_grad {
                        let gb = slot(&mut grads, &nodes, *b);
                        for (j, gv) in g.iter().enumerate() {
                            gb[pick(&mb, j)] += gv * ta.data()[pick(&ma, j)];
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    for (d, gv) in gx.iter_mut().zip(&g) {
                        *d += c * gv;
                    }
                }
                Op::Concat(parts) => {
                    let total = *node.value.shape().last().unwrap();
                    let rows = node.value.len() / total;
                    let mut offset = 0;
                    for p in parts {
                        let w = *nodes[p.0].value.shape().last().unwrap();
                        if nodes[p.0].needs_grad {
                            let gp = slot(&mut grads, &nodes, *p);
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + w];
                                for (d, s) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut grads, &nodes, *x);
                    for ((d, gv), yv) in gx.iter_mut().zip(&g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut grads, &nodes, *x);
                    for ((d, gv), yv) in gx.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let gx = slot(&mut grads, &nodes, *x);
                    for ((d, gv), yv) in gx.iter_mut().zip(&g).zip(y) {
                        if *yv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let cols = *node.value.shape().last().unwrap();
                    let gx = slot(&mut grads, &nodes, *x);
                    for ((dr, gr), yr) in gx
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(y.chunks(cols))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - dot);
                        }
                    }
                }
                Op::Embedding { table, indices } => {
                    let dim = nodes[table.0].value.shape()[1];
                    let gt = slot(&mut grads, &nodes, *table);
                    for (r, &idx) in indices.iter().enumerate() {
                        for (d, s) in gt[idx * dim..(idx + 1) * dim]
                            .iter_mut()
                            .zip(&g[r * dim..(r + 1) * dim])
                        {
                            *d += s;
                        }
                    }
                }
                Op::Sum(x) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Mean(x) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    let scale = g[0] / gx.len() as f64;
                    for d in gx.iter_mut() {
                        *d += scale;
                    }
                }
                Op::SumAxis(x, axis) => {
                    let shape = nodes[x.0].value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let mid = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let gx = slot(&mut grads, &nodes, *x);
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            for (d, s) in gx[base..base + inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    let gx = slot(&mut grads, &nodes, *x);
                    for (d, s) in gx.iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let classes = probs.len() / targets.len();
                    let scale = g[0] / targets.len() as f64;
                    let gl = slot(&mut grads, &nodes, *logits);
                    for (r, &y) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let p = probs[r * classes + c];
                            let delta = if c == y { p - 1.0 } else { p };
                            gl[r * classes + c] += scale * delta;
                        }
                    }
                }
            }
        }

        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            let Some(name) = &node.param else { continue };
            let g = grads[i]
                .take()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            match out.get_mut(name) {
                Some(existing) => {
                    for (d, s) in existing.data_mut().iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                None => {
                    out.insert(
                        name.clone(),
                        Tensor::from_parts(node.value.shape().to_vec(), g),
                    );
                }
            }
        }
        Ok(GradMap::from_map(out))
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in row.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in row.iter_mut() {
        *z /= total;
    }
}

/// `c = a · b + beta · c` for row-major `c` of shape `[m, n]`; `a` is `[m, k]`
/// and `b` is `[k, n]`, each given with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index reachable through the
    // given strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (j, slot) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - j);
        let db = dim_from_right(b, rank - 1 - j);
        *slot = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], back: usize) -> usize {
    if back < shape.len() {
        shape[shape.len() - 1 - back]
    } else {
        1
    }
}

type IndexMaps = HashMap<(Vec<usize>, Vec<usize>), Rc<Vec<usize>>>;

/// For each flat index of `out`, the flat index of the broadcast source.
/// Empty when the shapes coincide (identity map). Cached per shape pair.
fn index_map(src: &[usize], out: &[usize]) -> Rc<Vec<usize>> {
    thread_local! {
        static MAPS: RefCell<IndexMaps> = RefCell::new(HashMap::new());
    }
    MAPS.with(|maps| {
        let mut maps = maps.borrow_mut();
        let key = (src.to_vec(), out.to_vec());
        if let Some(m) = maps.get(&key) {
            return Rc::clone(m);
        }
        if maps.len() >= 256 {
            maps.clear();
        }
        let m = Rc::new(build_index_map(src, out));
        maps.insert(key, Rc::clone(&m));
        m
    })
}

fn build_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    if src == out {
        return Vec::new();
    }
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for j in (0..rank).rev() {
        let back = rank - 1 - j;
        let d = dim_from_right(src, back);
        if back < src.len() {
            strides[j] = if d == 1 { 0 } else { acc };
            acc *= d;
        }
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut idx = 0usize;
    for _ in 0..total {
        map.push(idx);
        for j in (0..rank).rev() {
            counter[j] += 1;
            idx += strides[j];
            if counter[j] < out[j] {
                break;
            }
            idx -= strides[j] * out[j];
            counter[j] = 0;
        }
    }
    map
}

#[inline]
fn pick(map: &[usize], i: usize) -> usize {
    if map.is_empty() {
        i
    } else {
        map[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = tape.apply(Primitive::Softmax, &[x]).unwrap();
        assert!(close(tape.value(y).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.constant(Tensor::matrix(2, 2, vec![1.5, -2.0, 3.25, 4.0]).unwrap());
        let y = tape.apply(Primitive::MatMul, &[i2, m]).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -2.0, 3.25, 4.0]);
    }

    #[test]
    fn tanh_matches_libm() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.5]));
        let y = tape.apply(Primitive::Tanh, &[x]).unwrap();
        assert!((tape.value(y).item() - 0.46211715726000974).abs() < 1e-15);
    }

    #[test]
    fn matmul_shape_error_names_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Shape { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn add_rejects_incompatible_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0; 17]));
        let l = tape.cross_entropy(z, &[4]).unwrap();
        assert!((tape.value(l).item() - 17f64.ln()).abs() < 1e-12);

        let mut sat = vec![-1000.0; 5];
        sat[2] = 1000.0;
        let z = tape.constant(Tensor::vector(sat));
        let l = tape.cross_entropy(z, &[2]).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);

        let z = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let l = tape.cross_entropy(z, &[0]).unwrap();
        let hand = -(1f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((tape.value(l).item() - hand).abs() < 1e-12);
        assert!((tape.value(l).item() - 2.4076).abs() < 5e-5);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0; 3]));
        assert!(matches!(
            tape.cross_entropy(z, &[3]),
            Err(Error::TargetOutOfRange {
                target: 3,
                classes: 3
            })
        ));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let theta = Tensor::vector(vec![1.0, 2.0]);
        let t = tape.param("theta", &theta);
        let sq = tape.mul(t, t).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("theta").unwrap().data(), &[2.0, 4.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param("a", &Tensor::vector(vec![3.0]));
        let _b = tape.param("b", &Tensor::vector(vec![5.0, 6.0]));
        let loss = tape.sum(a);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("b").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get("a").unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.param("a", &Tensor::vector(vec![3.0, 4.0]));
        let y = tape.tanh(a);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn broadcast_add_and_reduce() {
        let mut tape = Tape::new();
        let a = tape.param("a", &Tensor::new(vec![2, 1, 3], vec![1.0; 6]).unwrap());
        let b = tape.param("b", &Tensor::new(vec![4, 3], vec![2.0; 12]).unwrap());
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 3]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("a").unwrap().data(), &[4.0; 6]);
        assert_eq!(g.get("b").unwrap().data(), &[2.0; 12]);
    }

    #[test]
    fn sum_axis_middle() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
        let y = tape.sum_axis(x, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 2]);
        assert_eq!(tape.value(y).data(), &[6.0, 9.0, 24.0, 27.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.param("a", &Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = tape.param("b", &Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.apply(Primitive::Concat, &[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let p = tape.mul(c, w).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("a").unwrap().data(), &[1.0, 4.0]);
        assert_eq!(g.get("b").unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn embedding_lookup_via_apply() {
        let mut tape = Tape::new();
        let table = tape.param("emb", &Tensor::matrix(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let idx = tape.constant(Tensor::vector(vec![2.0, 0.0, 2.0]));
        let e = tape.apply(Primitive::EmbeddingLookup, &[table, idx]).unwrap();
        assert_eq!(tape.value(e).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let loss = tape.apply(Primitive::Sum, &[e]).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("emb").unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
