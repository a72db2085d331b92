use std::collections::HashMap;
use std::str::FromStr;

use super::kernels::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Primitive kinds reachable through [`Graph::forward_primitive`].
///
/// The textual form used by [`FromStr`] is `name[:attr...]`, e.g.
/// `concat:1`, `slice:1:0:256`, `embedding_gather:0,3,3`.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    EmbeddingGather { indices: Vec<usize> },
    Sum,
    Mean,
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let attrs: Vec<&str> = parts.collect();
        let unknown = || Error::UnknownOp(s.to_string());
        let num = |i: usize| -> Result<usize> {
            attrs
                .get(i)
                .and_then(|a| a.parse().ok())
                .ok_or_else(unknown)
        };
        let kind = match name {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "mul" => OpKind::Mul,
            "concat" => OpKind::Concat { axis: num(0)? },
            "slice" => OpKind::Slice {
                axis: num(0)?,
                start: num(1)?,
                end: num(2)?,
            },
            "sigmoid" => OpKind::Sigmoid,
            "tanh" => OpKind::Tanh,
            "relu" => OpKind::Relu,
            "softmax" => OpKind::Softmax,
            "embedding_gather" => {
                let list = attrs.first().ok_or_else(unknown)?;
                let indices = if list.is_empty() {
                    Vec::new()
                } else {
                    list.split(',')
                        .map(|v| v.parse().map_err(|_| unknown()))
                        .collect::<Result<_>>()?
                };
                OpKind::EmbeddingGather { indices }
            }
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            _ => return Err(unknown()),
        };
        Ok(kind)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Gather(Var, Vec<usize>),
    TileRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Attend(Var, Var),
    Sum(Var),
    Mean(Var),
    SqErr(Var, Var, Option<Vec<f64>>),
    Nll(Var, Vec<usize>, Vec<f64>, f64),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of primitive operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of every parameter leaf into the store.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore) {
        for (&id, &var) in &graph.params {
            if let Some(g) = self.wrt(var) {
                store.tensor_mut(id).accumulate_grad(g);
            }
        }
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
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

fn add_into(dst: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = dst.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => value.requires_grad(),
            Op::Param => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        let op = if requires_grad { op } else { Op::Leaf };
        let mut value = value;
        value.set_requires_grad(requires_grad);
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant (or user-declared differentiable) leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, &[])
    }

    /// Inserts a parameter once per graph; later calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.tensor(id).clone();
        let v = if t.requires_grad() {
            self.push(t, Op::Param, &[])
        } else {
            self.push(t, Op::Leaf, &[])
        };
        self.params.insert(id, v);
        v
    }

    /// Applies a primitive by kind. Covers the core primitive set; the typed
    /// methods below are the everyday entry points.
    pub fn forward_primitive(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::ShapeMismatch {
                    op: "forward_primitive",
                    shapes: vec![vec![n], vec![inputs.len()]],
                })
            }
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::Slice { axis, start, end } => {
                arity(1)?;
                self.slice(inputs[0], *axis, *start, *end)
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpKind::Tanh => {
                arity(1)?;
                Ok(self.tanh(inputs[0]))
            }
            OpKind::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpKind::Softmax => {
                arity(1)?;
                Ok(self.softmax(inputs[0]))
            }
            OpKind::EmbeddingGather { indices } => {
                arity(1)?;
                self.gather_rows(inputs[0], indices)
            }
            OpKind::Sum => {
                arity(1)?;
                Ok(self.sum(inputs[0]))
            }
            OpKind::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &[sa, sb]));
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
            0.0,
            &mut out,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum. `b` may also be a 1-D bias broadcast over the rows of a 2-D `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            let t = Tensor::new(sa, data)?;
            return Ok(self.push(t, Op::Add(a, b), &[a, b]));
        }
        if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let bias = self.value(b).data().to_vec();
            let mut data = self.value(a).data().to_vec();
            for row in data.chunks_mut(sa[1]) {
                row.iter_mut().zip(&bias).for_each(|(x, y)| *x += y);
            }
            let t = Tensor::new(sa, data)?;
            return Ok(self.push(t, Op::AddRow(a, b), &[a, b]));
        }
        Err(mismatch("add", &[&sa, &sb]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("sub", &[sa, sb]));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mul", &[sa, sb]));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|e| scale * e + shift).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Concatenation of 1-D or 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|&v| self.shape(v)).collect();
        let err = || mismatch("concat", &shapes);
        let first = *shapes.first().ok_or_else(err)?;
        if first.len() == 1 {
            if axis != 0 || shapes.iter().any(|s| s.len() != 1) {
                return Err(err());
            }
            let data: Vec<f64> = inputs
                .iter()
                .flat_map(|&v| self.value(v).data().iter().copied())
                .collect();
            let t = Tensor::new(vec![data.len()], data)?;
            return Ok(self.push(t, Op::Concat(inputs.to_vec(), 0), inputs));
        }
        if first.len() != 2 || axis > 1 || shapes.iter().any(|s| s.len() != 2) {
            return Err(err());
        }
        let other = 1 - axis;
        if shapes.iter().any(|s| s[other] != first[other]) {
            return Err(err());
        }
        let total: usize = shapes.iter().map(|s| s[axis]).sum();
        let t = if axis == 0 {
            let data: Vec<f64> = inputs
                .iter()
                .flat_map(|&v| self.value(v).data().iter().copied())
                .collect();
            Tensor::new(vec![total, first[1]], data)?
        } else {
            let rows = first[0];
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        Ok(self.push(t, Op::Concat(inputs.to_vec(), axis), inputs))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let ok = start <= end
            && ((s.len() == 1 && axis == 0 && end <= s[0])
                || (s.len() == 2 && axis < 2 && end <= s[axis]));
        if !ok {
            return Err(mismatch("slice", &[&s, &[axis, start, end]]));
        }
        let v = self.value(x);
        let t = if s.len() == 1 {
            Tensor::new(vec![end - start], v.data()[start..end].to_vec())?
        } else if axis == 0 {
            Tensor::new(
                vec![end - start, s[1]],
                v.data()[start * s[1]..end * s[1]].to_vec(),
            )?
        } else {
            let mut data = Vec::with_capacity(s[0] * (end - start));
            for r in 0..s[0] {
                data.extend_from_slice(&v.row(r)[start..end]);
            }
            Tensor::new(vec![s[0], end - start], data)?
        };
        Ok(self.push(t, Op::Slice(x, axis, start, end), &[x]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(t, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.max(0.0), Op::Relu(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let cols = v.cols().max(1);
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            row.iter_mut().for_each(|e| *e /= total);
        }
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Row gather: output row `i` is `table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(mismatch("embedding_gather", &[&s]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::IndexOutOfRange {
                what: "embedding_gather",
                index: bad,
                size: s[0],
            });
        }
        let v = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * s[1]);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let t = Tensor::new(vec![indices.len(), s[1]], data)?;
        Ok(self.push(t, Op::Gather(table, indices.to_vec()), &[table]))
    }

    /// Stacks `times` copies of a 2-D tensor vertically.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(mismatch("tile_rows", &[&s]));
        }
        let src = self.value(x).data();
        let data = src.repeat(times);
        let t = Tensor::new(vec![s[0] * times, s[1]], data)?;
        Ok(self.push(t, Op::TileRows(x, times), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(mismatch("transpose", &[&s]));
        }
        let v = self.value(x);
        let mut data = vec![0.0; v.len()];
        for r in 0..s[0] {
            for c in 0..s[1] {
                data[c * s[0] + r] = v.data()[r * s[1] + c];
            }
        }
        let t = Tensor::new(vec![s[1], s[0]], data)?;
        Ok(self.push(t, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(mismatch("reshape", &[v.shape(), shape]));
        }
        let t = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Attention read-out over a time-major memory.
    ///
    /// `weights` is `B×N`, `memory` is `(N·B)×D` with row `t·B + b` holding
    /// step `t` of item `b`; the result row `b` is `Σ_t weights[b,t]·memory[t·B+b]`.
    pub fn attend(&mut self, weights: Var, memory: Var) -> Result<Var> {
        let (sw, sm) = (self.shape(weights).to_vec(), self.shape(memory).to_vec());
        if sw.len() != 2 || sm.len() != 2 || sw[0] * sw[1] != sm[0] {
            return Err(mismatch("attend", &[&sw, &sm]));
        }
        let (b, n, d) = (sw[0], sw[1], sm[1]);
        let (w, m) = (self.value(weights), self.value(memory));
        let mut out = vec![0.0; b * d];
        for item in 0..b {
            let dst = &mut out[item * d..(item + 1) * d];
            for t in 0..n {
                let a = w.data()[item * n + t];
                dst.iter_mut()
                    .zip(m.row(t * b + item))
                    .for_each(|(o, x)| *o += a * x);
            }
        }
        let t = Tensor::new(vec![b, d], out)?;
        Ok(self.push(t, Op::Attend(weights, memory), &[weights, memory]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `Σ_i (pred_i − target_i)²`, the squared L2 distance.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.weighted_sq_err(pred, target, None)
    }

    /// `Σ_i w_i·(pred_i − target_i)²` with constant per-element weights.
    pub fn weighted_sq_err(
        &mut self,
        pred: Var,
        target: Var,
        weights: Option<Vec<f64>>,
    ) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(mismatch("l2_loss", &[sp, st]));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        if let Some(w) = &weights {
            if w.len() != p.len() {
                return Err(mismatch("l2_loss", &[sp, &[w.len()]]));
            }
        }
        let mut total = 0.0;
        for i in 0..p.len() {
            let d = p[i] - t[i];
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            total += w * d * d;
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::SqErr(pred, target, weights),
            &[pred, target],
        ))
    }

    /// `−Σ_i w_i·log(max(probs[i, targets[i]], floor))`.
    pub fn nll(
        &mut self,
        probs: Var,
        targets: &[usize],
        weights: &[f64],
        floor: f64,
    ) -> Result<Var> {
        let s = self.shape(probs).to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] != weights.len() {
            return Err(mismatch("nll", &[&s, &[targets.len()], &[weights.len()]]));
        }
        if let Some(&bad) = targets.iter().find(|&&k| k >= s[1]) {
            return Err(Error::IndexOutOfRange {
                what: "nll target",
                index: bad,
                size: s[1],
            });
        }
        let p = self.value(probs);
        let total: f64 = targets
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (&k, &w))| -w * p.at(i, k).max(floor).ln())
            .sum();
        Ok(self.push(
            Tensor::scalar(total),
            Op::Nll(probs, targets.to_vec(), weights.to_vec(), floor),
            &[probs],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Convenience: backward plus accumulation into the parameter store.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(self, store);
        Ok(grads)
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let bv = self.value(*b).data();
                    add_into(&mut grads[a.0], m * k, |da| {
                        gemm(m, n, k, g, (n, 1), bv, (1, n), 1.0, da)
                    });
                }
                if needs(*b) {
                    let av = self.value(*a).data();
                    add_into(&mut grads[b.0], k * n, |db| {
                        gemm(k, m, n, av, (1, k), g, (n, 1), 1.0, db)
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        add_into(&mut grads[v.0], g.len(), |d| {
                            d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                        });
                    }
                }
            }
            Op::AddRow(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[a.0], g.len(), |d| {
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    });
                }
                if needs(*b) {
                    let n = len(*b);
                    add_into(&mut grads[b.0], n, |d| {
                        for row in g.chunks(n) {
                            d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                        }
                    });
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[a.0], g.len(), |d| {
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                    });
                }
                if needs(*b) {
                    add_into(&mut grads[b.0], g.len(), |d| {
                        d.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    add_into(&mut grads[a.0], g.len(), |d| {
                        for j in 0..g.len() {
                            d[j] += g[j] * bv[j];
                        }
                    });
                }
                if needs(*b) {
                    add_into(&mut grads[b.0], g.len(), |d| {
                        for j in 0..g.len() {
                            d[j] += g[j] * av[j];
                        }
                    });
                }
            }
            Op::Affine(x, scale) => {
                add_into(&mut grads[x.0], g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b)
                });
            }
            Op::Concat(inputs, axis) => {
                if out.shape().len() == 1 || *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let n = len(v);
                        if needs(v) {
                            add_into(&mut grads[v.0], n, |d| {
                                d.iter_mut()
                                    .zip(&g[offset..offset + n])
                                    .for_each(|(a, b)| *a += b)
                            });
                        }
                        offset += n;
                    }
                } else {
                    let (rows, total) = (out.shape()[0], out.shape()[1]);
                    let mut col = 0;
                    for &v in inputs {
                        let w = self.shape(v)[1];
                        if needs(v) {
                            add_into(&mut grads[v.0], rows * w, |d| {
                                for r in 0..rows {
                                    let src = &g[r * total + col..r * total + col + w];
                                    d[r * w..(r + 1) * w]
                                        .iter_mut()
                                        .zip(src)
                                        .for_each(|(a, b)| *a += b);
                                }
                            });
                        }
                        col += w;
                    }
                }
            }
            Op::Slice(x, axis, start, end) => {
                let s = self.shape(*x).to_vec();
                add_into(&mut grads[x.0], len(*x), |d| {
                    if s.len() == 1 {
                        d[*start..*end]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(a, b)| *a += b);
                    } else if *axis == 0 {
                        d[start * s[1]..end * s[1]]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(a, b)| *a += b);
                    } else {
                        let w = end - start;
                        for r in 0..s[0] {
                            d[r * s[1] + start..r * s[1] + end]
                                .iter_mut()
                                .zip(&g[r * w..(r + 1) * w])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                add_into(&mut grads[x.0], g.len(), |d| {
                    for j in 0..g.len() {
                        d[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = out.data();
                add_into(&mut grads[x.0], g.len(), |d| {
                    for j in 0..g.len() {
                        d[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                add_into(&mut grads[x.0], g.len(), |d| {
                    for j in 0..g.len() {
                        if xv[j] > 0.0 {
                            d[j] += g[j];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let cols = out.cols().max(1);
                let y = out.data();
                add_into(&mut grads[x.0], g.len(), |d| {
                    for r in 0..y.len() / cols {
                        let (ys, gs) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            d[r * cols + c] += ys[c] * (gs[c] - dot);
                        }
                    }
                });
            }
            Op::Gather(table, indices) => {
                let w = self.shape(*table)[1];
                add_into(&mut grads[table.0], len(*table), |d| {
                    for (r, &idx) in indices.iter().enumerate() {
                        d[idx * w..(idx + 1) * w]
                            .iter_mut()
                            .zip(&g[r * w..(r + 1) * w])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::TileRows(x, times) => {
                let n = len(*x);
                add_into(&mut grads[x.0], n, |d| {
                    for t in 0..*times {
                        d.iter_mut()
                            .zip(&g[t * n..(t + 1) * n])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Transpose(x) => {
                let s = self.shape(*x).to_vec();
                add_into(&mut grads[x.0], g.len(), |d| {
                    for r in 0..s[0] {
                        for c in 0..s[1] {
                            d[r * s[1] + c] += g[c * s[0] + r];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                add_into(&mut grads[x.0], g.len(), |d| {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
            }
            Op::Attend(weights, memory) => {
                let sw = self.shape(*weights).to_vec();
                let (b, n) = (sw[0], sw[1]);
                let d = self.shape(*memory)[1];
                let (wv, mv) = (self.value(*weights), self.value(*memory));
                if needs(*weights) {
                    add_into(&mut grads[weights.0], b * n, |dw| {
                        for item in 0..b {
                            let gi = &g[item * d..(item + 1) * d];
                            for t in 0..n {
                                dw[item * n + t] +=
                                    gi.iter().zip(mv.row(t * b + item)).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                }
                if needs(*memory) {
                    add_into(&mut grads[memory.0], n * b * d, |dm| {
                        for item in 0..b {
                            let gi = &g[item * d..(item + 1) * d];
                            for t in 0..n {
                                let a = wv.data()[item * n + t];
                                let row = t * b + item;
                                dm[row * d..(row + 1) * d]
                                    .iter_mut()
                                    .zip(gi)
                                    .for_each(|(x, y)| *x += a * y);
                            }
                        }
                    });
                }
            }
            Op::Sum(x) => {
                add_into(&mut grads[x.0], len(*x), |d| {
                    d.iter_mut().for_each(|a| *a += g[0])
                });
            }
            Op::Mean(x) => {
                let n = len(*x);
                add_into(&mut grads[x.0], n, |d| {
                    d.iter_mut().for_each(|a| *a += g[0] / n as f64)
                });
            }
            Op::SqErr(pred, target, weights) => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let coef = |j: usize| 2.0 * weights.as_ref().map_or(1.0, |w| w[j]) * (p[j] - t[j]) * g[0];
                if needs(*pred) {
                    add_into(&mut grads[pred.0], p.len(), |d| {
                        for j in 0..p.len() {
                            d[j] += coef(j);
                        }
                    });
                }
                if needs(*target) {
                    add_into(&mut grads[target.0], p.len(), |d| {
                        for j in 0..p.len() {
                            d[j] -= coef(j);
                        }
                    });
                }
            }
            Op::Nll(probs, targets, weights, floor) => {
                let p = self.value(*probs);
                let cols = p.cols();
                add_into(&mut grads[probs.0], p.len(), |d| {
                    for (r, (&k, &w)) in targets.iter().zip(weights).enumerate() {
                        let v = p.at(r, k);
                        if v > *floor {
                            d[r * cols + k] -= g[0] * w / v;
                        }
                    }
                });
            }
        }
    }
}
