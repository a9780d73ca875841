//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value and enough cached state to run its backward rule. Nodes
//! are appended in execution order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Trainable weights live in a [`ParamStore`] outside the tape. A parameter
//! enters a tape through [`Tape::param`]; on backward its gradient is added to
//! the stored [`Parameter::grad`], so repeated backward calls accumulate until
//! [`ParamStore::zero_grad`].

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionMask;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    trainable: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    /// Mutable access to the weights. The shape cannot change.
    pub fn value_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.grad.data_mut()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Simultaneous mutable access to value and gradient.
    pub fn value_and_grad_mut(&mut self) -> (&mut [f64], &[f64]) {
        (self.value.data_mut(), self.grad.data())
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Ordered registry of named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Parameter(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable: true,
        });
        Ok(id)
    }

    /// Swaps in a new value (any shape) and resets the gradient.
    pub fn replace(&mut self, id: ParamId, value: Tensor) {
        let p = &mut self.params[id.0];
        p.grad = Tensor::zeros(value.shape());
        p.value = value;
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Euclidean norm over all trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.norm_sq())
            .sum::<f64>()
            .sqrt()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore_index: usize,
        probs: Tensor,
        count: usize,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        allowed: Vec<Vec<usize>>,
        weights: Vec<Vec<f64>>,
        scale: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

const GELU_COEFF: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    let t = (c * (x + GELU_COEFF * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEFF * x * x)
}

/// Records a forward pass for later differentiation.
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    rng: ChaCha8Rng,
    non_finite: Option<&'static str>,
    score_evaluations: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// A tape whose dropout masks are drawn from a stream seeded with `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            non_finite: None,
            score_evaluations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Number of query/key score entries computed by attention so far.
    pub fn score_evaluations(&self) -> usize {
        self.score_evaluations
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    /// Brings a stored parameter onto the tape; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id), "param");
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), "matmul"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), "sub"))
    }

    /// Adds a vector to every row (broadcast over the last axis).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let n = xv.last_dim();
        if bv.len() != n {
            return Err(Error::Dimension(format!(
                "bias of length {} for rows of length {n}",
                bv.len()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), "add_bias"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), "mul"))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), "transpose"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), "reshape"))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let rows = self.value(*first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::Dimension(format!(
                    "concat_cols row mismatch: {r} vs {rows}"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols"))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if start >= end || end > cols {
            return Err(Error::Index(format!(
                "column slice {start}..{end} of a {cols}-column matrix"
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], out)?;
        Ok(self.push(out, Op::SliceCols { x, start }, "slice_cols"))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let cols = self.value(*first).dims2()?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows column mismatch: {c} vs {cols}"
                )));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows"))
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.value(x).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Index(format!("row {bad} of a {n}-row matrix")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(xv.row(r));
        }
        let out = Tensor::new(vec![rows.len(), cols], out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            "gather_rows",
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::Mean(a), "mean")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_scalar);
        self.push(out, Op::Gelu(a), "gelu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        Ok(self.push(out, Op::Softmax { x: a, axis }, "softmax"))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, epsilon: f64) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.last_dim();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != n || bv.len() != n {
            return Err(Error::Dimension(format!(
                "layer norm gain/bias of length {}/{} for rows of length {n}",
                gv.len(),
                bv.len()
            )));
        }
        let mut normalized = xv.clone();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.len() / n);
        for (row, out_row) in normalized
            .data_mut()
            .chunks_mut(n)
            .zip(out.data_mut().chunks_mut(n))
        {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + epsilon).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv;
                out_row[j] = *v * gv.data()[j] + bv.data()[j];
            }
            inv_std.push(inv);
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            "layer_norm",
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` so evaluation is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }, "dropout"))
    }

    /// Mean negative log-likelihood over rows whose target is not `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: usize) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = lv.dims2()?;
        if targets.len() != rows {
            return Err(Error::Dimension(format!(
                "{} targets for {rows} rows of logits",
                targets.len()
            )));
        }
        if let Some(&bad) = targets
            .iter()
            .find(|&&t| t != ignore_index && t >= classes)
        {
            return Err(Error::Index(format!("target {bad} with {classes} categories")));
        }
        let count = targets.iter().filter(|&&t| t != ignore_index).count();
        if count == 0 {
            return Err(Error::UndefinedLoss("every row is ignored".into()));
        }
        let probs = lv.softmax(1)?;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                continue;
            }
            // log-sum-exp form keeps large logits exact
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let out = Tensor::scalar(total / count as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore_index,
                probs,
                count,
            },
            "cross_entropy",
        ))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, _) = self.value(table).dims2()?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("id {bad} in a table of {n} rows")));
        }
        let out = {
            let tv = self.value(table);
            let cols = tv.last_dim();
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &i in ids {
                data.extend_from_slice(tv.row(i));
            }
            Tensor::new(vec![ids.len(), cols], data)?
        };
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            "embedding",
        ))
    }

    /// Scaled dot-product attention restricted to the positions `mask` allows.
    ///
    /// Only allowed (query, key) pairs are scored; disallowed pairs carry weight
    /// exactly zero. A query row with no allowed key is a contract error.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: &AttentionMask) -> Result<Var> {
        let (tq, d) = self.value(q).dims2()?;
        let (tk, dk) = self.value(k).dims2()?;
        let (tv, dv) = self.value(v).dims2()?;
        if d != dk || tk != tv {
            return Err(Error::Dimension(format!(
                "attention with Q {tq}x{d}, K {tk}x{dk}, V {tv}x{dv}"
            )));
        }
        if mask.rows() != tq || mask.cols() != tk {
            return Err(Error::Dimension(format!(
                "mask {}x{} for scores {tq}x{tk}",
                mask.rows(),
                mask.cols()
            )));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut weights = Vec::with_capacity(tq);
        let mut out = vec![0.0; tq * dv];
        let mut evaluated = 0;
        for t in 0..tq {
            let allowed = mask.allowed(t);
            if allowed.is_empty() {
                return Err(Error::Contract(format!(
                    "query {t} may not attend to any position"
                )));
            }
            let q_row = qv.row(t);
            let mut w: Vec<f64> = allowed
                .iter()
                .map(|&j| {
                    q_row
                        .iter()
                        .zip(kv.row(j))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        * scale
                })
                .collect();
            evaluated += w.len();
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in &mut w {
                *s = (*s - max).exp();
                total += *s;
            }
            let out_row = &mut out[t * dv..(t + 1) * dv];
            for (s, &j) in w.iter_mut().zip(allowed) {
                *s /= total;
                for (o, x) in out_row.iter_mut().zip(vv.row(j)) {
                    *o += *s * x;
                }
            }
            weights.push(w);
        }
        self.score_evaluations += evaluated;
        let out = Tensor::new(vec![tq, dv], out)?;
        let allowed = (0..tq).map(|t| mask.allowed(t).to_vec()).collect();
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                allowed,
                weights,
                scale,
            },
            "attention",
        ))
    }

    /// Dense `T x T*` attention weights recorded by an [`Tape::attention`] node.
    pub fn attention_weights(&self, var: Var) -> Option<Tensor> {
        match &self.nodes[var.0].op {
            Op::Attention {
                k,
                allowed,
                weights,
                ..
            } => {
                let cols = self.value(*k).shape()[0];
                let mut dense = Tensor::zeros(&[allowed.len(), cols]);
                for (t, (cols_t, w)) in allowed.iter().zip(weights).enumerate() {
                    for (&j, &a) in cols_t.iter().zip(w) {
                        dense.data_mut()[t * cols + j] = a;
                    }
                }
                Some(dense)
            }
            _ => None,
        }
    }

    /// Reverse sweep from a scalar `loss`; parameter gradients are added into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if let Some(op) = self.non_finite {
            return Err(Error::NonFinite { op });
        }
        if !self.value(loss).is_scalar_like() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads, store)?;
            grads[i] = Some(g);
        }
        if store
            .params
            .iter()
            .any(|p| p.trainable && !p.grad.all_finite())
        {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(Gradients { grads })
    }

    fn backward_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad.add_assign(g)?;
                }
            }
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(grads, *a, g.matmul(&bv.transpose()?)?)?;
                accumulate(grads, *b, av.transpose()?.matmul(g)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::AddBias(x, b) => {
                accumulate(grads, *x, g.clone())?;
                let bv = self.value(*b);
                let n = bv.len();
                let mut gb = Tensor::zeros(bv.shape());
                for row in g.data().chunks(n) {
                    for (o, v) in gb.data_mut().iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(grads, *b, gb)?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.mul(self.value(*b))?)?;
                accumulate(grads, *b, g.mul(self.value(*a))?)?;
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?)?,
            Op::Reshape(a) => {
                accumulate(grads, *a, g.reshape(self.value(*a).shape())?)?;
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    let mut gp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, p, Tensor::new(vec![rows, c], gp)?)?;
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (rows, cols) = xv.dims2()?;
                let width = g.shape()[1];
                let mut gx = Tensor::zeros(&[rows, cols]);
                for r in 0..rows {
                    gx.data_mut()[r * cols + start..r * cols + start + width]
                        .copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, gx)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let n: usize = shape.iter().product();
                    let gp = Tensor::new(shape, g.data()[offset..offset + n].to_vec())?;
                    accumulate(grads, p, gp)?;
                    offset += n;
                }
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let cols = xv.last_dim();
                let mut gx = Tensor::zeros(xv.shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (o, v) in gx.data_mut()[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(g.row(k))
                    {
                        *o += v;
                    }
                }
                accumulate(grads, *x, gx)?;
            }
            Op::Sum(a) => {
                accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), g.item()))?;
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let fill = g.item() / av.len() as f64;
                accumulate(grads, *a, Tensor::filled(av.shape(), fill))?;
            }
            Op::Relu(a) => {
                let ga = self
                    .value(*a)
                    .zip_map(g, |x, gy| if x > 0.0 { gy } else { 0.0 })?;
                accumulate(grads, *a, ga)?;
            }
            Op::Gelu(a) => {
                let ga = self.value(*a).zip_map(g, |x, gy| gy * gelu_grad_scalar(x))?;
                accumulate(grads, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let ga = node.value.zip_map(g, |y, gy| gy * y * (1.0 - y))?;
                accumulate(grads, *a, ga)?;
            }
            Op::Tanh(a) => {
                let ga = node.value.zip_map(g, |y, gy| gy * (1.0 - y * y))?;
                accumulate(grads, *a, ga)?;
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = y.axis_layout(*axis)?;
                let mut gx = Tensor::zeros(y.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len)
                            .map(|j| y.data()[base + j * inner] * g.data()[base + j * inner])
                            .sum();
                        for j in 0..len {
                            let idx = base + j * inner;
                            gx.data_mut()[idx] = y.data()[idx] * (g.data()[idx] - dot);
                        }
                    }
                }
                accumulate(grads, *x, gx)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let n = gv.len();
                let mut g_gain = Tensor::zeros(gv.shape());
                let mut g_bias = Tensor::zeros(gv.shape());
                let mut gx = Tensor::zeros(normalized.shape());
                for (r, ((gy, xh), gx_row)) in g
                    .data()
                    .chunks(n)
                    .zip(normalized.data().chunks(n))
                    .zip(gx.data_mut().chunks_mut(n))
                    .enumerate()
                {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..n {
                        g_bias.data_mut()[j] += gy[j];
                        g_gain.data_mut()[j] += gy[j] * xh[j];
                        let d = gy[j] * gv.data()[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    let inv = inv_std[r];
                    for j in 0..n {
                        let d = gy[j] * gv.data()[j];
                        gx_row[j] = inv * (d - sum_d / n as f64 - xh[j] * sum_dx / n as f64);
                    }
                }
                accumulate(grads, *x, gx)?;
                accumulate(grads, *gain, g_gain)?;
                accumulate(grads, *bias, g_bias)?;
            }
            Op::Dropout { x, mask } => {
                let mut gx = g.clone();
                for (o, m) in gx.data_mut().iter_mut().zip(mask) {
                    *o *= m;
                }
                accumulate(grads, *x, gx)?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore_index,
                probs,
                count,
            } => {
                let classes = probs.last_dim();
                let scale = g.item() / *count as f64;
                let mut gl = Tensor::zeros(probs.shape());
                for (i, &t) in targets.iter().enumerate() {
                    if t == *ignore_index {
                        continue;
                    }
                    let row = &mut gl.data_mut()[i * classes..(i + 1) * classes];
                    for (o, p) in row.iter_mut().zip(probs.row(i)) {
                        *o = p * scale;
                    }
                    row[t] -= scale;
                }
                accumulate(grads, *logits, gl)?;
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let cols = tv.last_dim();
                let mut gt = Tensor::zeros(tv.shape());
                for (k, &id) in ids.iter().enumerate() {
                    for (o, v) in gt.data_mut()[id * cols..(id + 1) * cols]
                        .iter_mut()
                        .zip(g.row(k))
                    {
                        *o += v;
                    }
                }
                accumulate(grads, *table, gt)?;
            }
            Op::Attention {
                q,
                k,
                v,
                allowed,
                weights,
                scale,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = Tensor::zeros(qv.shape());
                let mut gk = Tensor::zeros(kv.shape());
                let mut gvv = Tensor::zeros(vv.shape());
                let d = qv.last_dim();
                let dv = vv.last_dim();
                for (t, (cols, w)) in allowed.iter().zip(weights).enumerate() {
                    let gc = g.row(t);
                    // d(loss)/d(weight) for each allowed key
                    let dw: Vec<f64> = cols
                        .iter()
                        .map(|&j| gc.iter().zip(vv.row(j)).map(|(a, b)| a * b).sum())
                        .collect();
                    let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                    for ((&j, &a), &dwj) in cols.iter().zip(w).zip(&dw) {
                        for (o, x) in gvv.data_mut()[j * dv..(j + 1) * dv].iter_mut().zip(gc) {
                            *o += a * x;
                        }
                        let ds = a * (dwj - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            gq.data_mut()[t * d + c] += ds * kv.data()[j * d + c];
                            gk.data_mut()[j * d + c] += ds * qv.data()[t * d + c];
                        }
                    }
                }
                accumulate(grads, *q, gq)?;
                accumulate(grads, *k, gk)?;
                accumulate(grads, *v, gvv)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn linear_gradient_is_input() {
        let (mut store, w) = store_with("w", Tensor::scalar(2.0));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(Tensor::scalar(3.0));
        let y = tape.mul(wv, x).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.get(w).grad().item(), 3.0);
    }

    #[test]
    fn second_backward_doubles_gradient() {
        let (mut store, w) = store_with("w", Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.mul(wv, wv).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        let once = store.get(w).grad().clone();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad(), &once.scale(2.0));
        store.zero_grad();
        assert!(store.get(w).grad().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);

        let x2 = tape.constant(Tensor::new(vec![2], vec![3.0, -3.0]).unwrap());
        let y2 = tape.relu(x2);
        let s = tape.sum(y2);
        let grads = tape.backward(s, &mut store).unwrap();
        assert_eq!(grads.get(x2).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        // 1 * Phi(1) with Phi(1) = 0.841344746...
        assert!((gelu_scalar(1.0) - 0.841_344_746).abs() < 2e-3);
    }

    #[test]
    fn layer_norm_cases() {
        let mut tape = Tape::new();
        let gain = tape.constant(Tensor::ones(&[4]));
        let bias = tape.constant(Tensor::zeros(&[4]));
        let x = tape.constant(Tensor::new(vec![1, 4], vec![5.0; 4]).unwrap());
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let g2 = tape.constant(Tensor::ones(&[2]));
        let b2 = tape.constant(Tensor::zeros(&[2]));
        let x2 = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
        let y2 = tape.layer_norm(x2, g2, b2, 1e-12).unwrap();
        assert!((tape.value(y2).data()[0] + 1.0).abs() < 1e-9);
        assert!((tape.value(y2).data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_affine_equivalence() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 4.0, 4.5, -2.0]).unwrap());
        let one = tape.constant(Tensor::ones(&[3]));
        let zero = tape.constant(Tensor::zeros(&[3]));
        let two = tape.constant(Tensor::filled(&[3], 2.0));
        let plain = tape.layer_norm(x, one, zero, 1e-5).unwrap();
        let affine = tape.layer_norm(x, two, one, 1e-5).unwrap();
        let expect = tape.value(plain).map(|v| v * 2.0 + 1.0);
        assert!(expect.max_abs_diff(tape.value(affine)) < 1e-12);
    }

    #[test]
    fn dropout_modes() {
        let mut tape = Tape::with_seed(11);
        let x = tape.constant(Tensor::ones(&[100_000]));
        assert_eq!(tape.dropout(x, 0.0, true).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, false).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, true), Err(Error::Parameter(_))));

        let y = tape.dropout(x, 0.5, true).unwrap();
        let v = tape.value(y);
        let zeros = v.data().iter().filter(|&&a| a == 0.0).count() as f64 / v.len() as f64;
        assert!((v.mean() - 1.0).abs() < 0.02);
        assert!((zeros - 0.5).abs() < 0.02);
    }

    #[test]
    fn cross_entropy_cases() {
        let mut tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(&[1, 4]));
        let l = tape.cross_entropy(uniform, &[2], usize::MAX).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);

        let sharp = tape.constant(Tensor::new(vec![1, 3], vec![0.0, 50.0, 0.0]).unwrap());
        let l = tape.cross_entropy(sharp, &[1], usize::MAX).unwrap();
        assert!(tape.value(l).item() < 1e-4);

        let two = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 9.0, -3.0]).unwrap());
        let l = tape.cross_entropy(two, &[0, 7], 7).unwrap();
        // -log(e^1 / (e^1 + e^2)) = ln(1 + e)
        assert!((tape.value(l).item() - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);

        let err = tape.cross_entropy(two, &[7, 7], 7);
        assert!(matches!(err, Err(Error::UndefinedLoss(_))));
    }

    #[test]
    fn embedding_lookup_and_scatter() {
        let table = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (mut store, id) = store_with("table", table);
        let mut tape = Tape::new();
        let t = tape.param(&store, id);
        let first = tape.embedding(t, &[0]).unwrap();
        assert_eq!(tape.value(first).data(), &[1.0, 2.0]);
        let rep = tape.embedding(t, &[2, 2]).unwrap();
        assert_eq!(tape.value(rep).data(), &[5.0, 6.0, 5.0, 6.0]);
        let s = tape.sum(rep);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(id).grad().data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(tape.embedding(t, &[3]), Err(Error::Index(_))));
    }

    #[test]
    fn non_finite_values_abort_backward() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1e308));
        let y = tape.scale(x, 10.0);
        let s = tape.sum(y);
        assert!(matches!(
            tape.backward(s, &mut store),
            Err(Error::NonFinite { op: "scale" })
        ));
    }

    #[test]
    fn frozen_parameter_gets_no_gradient() {
        let (mut store, w) = store_with("w", Tensor::scalar(2.0));
        store.get_mut(w).set_trainable(false);
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let y = tape.scale(wv, 4.0);
        tape.backward(y, &mut store).unwrap();
        assert_eq!(store.get(w).grad().item(), 0.0);
    }
}
