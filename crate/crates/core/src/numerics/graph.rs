//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse from a scalar node and
//! accumulates gradients; [`Graph::flush_grads`] adds the gradients of
//! parameter leaves into the matching [`ParamStore`] slots.
//!
//! Sequences use a clip-major row layout: for `B` clips of `T` frames the
//! row index of frame `t` of clip `b` is `b * T + t`.

use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{gemm, MatRef, Tensor};
use crate::error::{invalid, Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const NORM_GUARD: f64 = 1e-24;

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols { src: Var, start: usize },
    GatherRows { src: Var, rows: Vec<usize> },
    StackSteps { steps: Vec<Var> },
    SegmentMean { src: Var, segment: usize },
    RepeatRows { src: Var, times: usize },
    NormalizeRows { src: Var, norms: Vec<f64> },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64> },
    SumSquaredError { pred: Var, target: Tensor },
    WeightedSum { src: Var, weights: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
    requires_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) => vec![*a],
            Op::ConcatCols(v) | Op::StackSteps { steps: v } => v.clone(),
            Op::SliceCols { src, .. }
            | Op::GatherRows { src, .. }
            | Op::SegmentMean { src, .. }
            | Op::RepeatRows { src, .. }
            | Op::NormalizeRows { src, .. }
            | Op::WeightedSum { src, .. } => vec![*src],
            Op::SumSquaredError { pred, .. } => vec![*pred],
            Op::BatchNorm { x, gamma, beta, .. } | Op::ChannelAffine { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
        }
    }
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the batch rows.
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, Var>,
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

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced on tape");
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf that receives a gradient without being a stored parameter.
    pub fn watched(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Leaf bound to a named parameter; repeated lookups share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store
            .value(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(name.to_string());
        self.nodes[v.0].requires_grad = true;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + b` with `b` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.len() != xv.cols() {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv.data()[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() || av.cols() != bv.cols() {
            return Err(Error::shape(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| x * k);
        self.push(t, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            invalid!("concat_cols of nothing");
        };
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(*first), self.shape(*p)));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let t = Tensor::matrix(rows, total, data)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let sv = self.value(src);
        if start + len > sv.cols() {
            return Err(Error::shape("slice_cols", sv.shape(), &[start, len]));
        }
        let rows = sv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&sv.row(r)[start..start + len]);
        }
        let t = Tensor::matrix(rows, len, data)?;
        Ok(self.push(t, Op::SliceCols { src, start }))
    }

    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let sv = self.value(src);
        if let Some(bad) = rows.iter().find(|&&r| r >= sv.rows()) {
            invalid!("gather_rows index {bad} out of {} rows", sv.rows());
        }
        let mut data = Vec::with_capacity(rows.len() * sv.cols());
        for &r in rows {
            data.extend_from_slice(sv.row(r));
        }
        let t = Tensor::matrix(rows.len(), sv.cols(), data)?;
        Ok(self.push(t, Op::GatherRows { src, rows: rows.to_vec() }))
    }

    /// Interleaves `T` per-step `[B×H]` matrices into a `[B*T × H]` sequence.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var> {
        let Some(first) = steps.first() else {
            invalid!("stack_steps of an empty sequence");
        };
        let (b, h) = (self.value(*first).rows(), self.value(*first).cols());
        let t_len = steps.len();
        let mut data = vec![0.0; b * t_len * h];
        for (t, s) in steps.iter().enumerate() {
            let sv = self.value(*s);
            if sv.rows() != b || sv.cols() != h {
                return Err(Error::shape("stack_steps", self.shape(*first), sv.shape()));
            }
            for bi in 0..b {
                let dst = (bi * t_len + t) * h;
                data[dst..dst + h].copy_from_slice(sv.row(bi));
            }
        }
        let t = Tensor::matrix(b * t_len, h, data)?;
        Ok(self.push(t, Op::StackSteps { steps: steps.to_vec() }))
    }

    /// Mean over consecutive groups of `segment` rows.
    pub fn segment_mean(&mut self, src: Var, segment: usize) -> Result<Var> {
        let sv = self.value(src);
        if segment == 0 || sv.rows() % segment != 0 {
            invalid!("segment_mean: {} rows not divisible by {segment}", sv.rows());
        }
        let (groups, c) = (sv.rows() / segment, sv.cols());
        let mut data = vec![0.0; groups * c];
        for r in 0..sv.rows() {
            let g = r / segment;
            for (o, v) in data[g * c..(g + 1) * c].iter_mut().zip(sv.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / segment as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let t = Tensor::matrix(groups, c, data)?;
        Ok(self.push(t, Op::SegmentMean { src, segment }))
    }

    /// Repeats each row `times` times consecutively.
    pub fn repeat_rows(&mut self, src: Var, times: usize) -> Result<Var> {
        let sv = self.value(src);
        let mut data = Vec::with_capacity(sv.len() * times);
        for r in 0..sv.rows() {
            for _ in 0..times {
                data.extend_from_slice(sv.row(r));
            }
        }
        let t = Tensor::matrix(sv.rows() * times, sv.cols(), data)?;
        Ok(self.push(t, Op::RepeatRows { src, times }))
    }

    /// Scales each row to unit Euclidean norm (guarded for the zero row).
    pub fn normalize_rows(&mut self, src: Var) -> Result<Var> {
        let sv = self.value(src);
        let mut out = sv.clone();
        let mut norms = Vec::with_capacity(sv.rows());
        for r in 0..sv.rows() {
            let row = out.row_mut(r);
            let n = (row.iter().map(|v| v * v).sum::<f64>() + NORM_GUARD).sqrt();
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(self.push(out, Op::NormalizeRows { src, norms }))
    }

    /// Training-mode batch norm over rows with per-column statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, d) = (xv.rows(), xv.cols());
        if gv.len() != d || bv.len() != d {
            return Err(Error::shape("batch_norm", xv.shape(), gv.shape()));
        }
        if n < 2 {
            invalid!("batch_norm in train mode needs at least 2 rows, got {n}");
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                let z = (xv.at(r, c) - mean[c]) * inv_std[c];
                xhat[r * d + c] = z;
                out[r * d + c] = gv.data()[c] * z + bv.data()[c];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let stats = BatchStats { mean, var };
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, stats))
    }

    /// Eval-mode batch norm: normalization with fixed statistics.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        if gv.len() != d || bv.len() != d || mean.len() != d || var.len() != d {
            return Err(Error::shape("batch_norm", xv.shape(), gv.shape()));
        }
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut out = xv.clone();
        for r in 0..xv.rows() {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = gv.data()[c] * (*o - mean[c]) * inv_std[c] + bv.data()[c];
            }
        }
        Ok(self.push(
            out,
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
        ))
    }

    /// `Σ (pred − target)²` as a scalar node.
    pub fn sum_squared_error(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::shape("sum_squared_error", pv.shape(), target.shape()));
        }
        let s = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::SumSquaredError {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// `Σ w ⊙ x` as a scalar node.
    pub fn weighted_sum(&mut self, src: Var, weights: &Tensor) -> Result<Var> {
        let sv = self.value(src);
        if sv.len() != weights.len() {
            return Err(Error::shape("weighted_sum", sv.shape(), weights.shape()));
        }
        let s = sv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                src,
                weights: weights.clone(),
            },
        ))
    }

    /// Reverse sweep from a scalar node. Clears gradients from earlier sweeps.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            invalid!("backward needs a scalar, got shape {:?}", self.shape(loss));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds parameter-leaf gradients into the store's gradient slots.
    pub fn flush_grads(&self, store: &mut ParamStore) {
        for (name, v) in &self.params {
            if let Some(g) = self.grad(*v) {
                store.accumulate_grad(name, g);
            }
        }
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut self.grads[v.0];
        let g = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(g.data_mut());
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor) {
        // Temporarily take the op so node values can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.value(*a).rows(), self.value(*a).cols());
                let m = self.value(*b).cols();
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let bv = std::mem::take(&mut self.nodes[b.0].value);
                self.acc(*a, |ga| {
                    gemm(n, m, k, MatRef::row_major(g.data(), m), MatRef::transposed(bv.data(), m), ga, true)
                });
                self.nodes[b.0].value = bv;
                let av = std::mem::take(&mut self.nodes[a.0].value);
                self.acc(*b, |gb| {
                    gemm(k, n, m, MatRef::transposed(av.data(), k), MatRef::row_major(g.data(), m), gb, true)
                });
                self.nodes[a.0].value = av;
            }
            Op::AddBias(x, b) => {
                let c = g.cols();
                self.acc(*x, |gx| add_into(gx, g.data()));
                self.acc(*b, |gb| {
                    for (j, v) in g.data().iter().enumerate() {
                        gb[j % c] += v;
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(*a, |ga| add_into(ga, g.data()));
                self.acc(*b, |gb| add_into(gb, g.data()));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |ga| add_into(ga, g.data()));
                self.acc(*b, |gb| gb.iter_mut().zip(g.data()).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.acc(*a, |ga| {
                    for ((o, gv), y) in ga.iter_mut().zip(g.data()).zip(&bv) {
                        *o += gv * y;
                    }
                });
                self.acc(*b, |gb| {
                    for ((o, gv), x) in gb.iter_mut().zip(g.data()).zip(&av) {
                        *o += gv * x;
                    }
                });
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.acc(*a, |ga| ga.iter_mut().zip(g.data()).for_each(|(o, v)| *o += k * v));
            }
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) => {
                let y = std::mem::take(&mut self.nodes[i].value);
                let x = self.nodes[a.0].value.data().to_vec();
                let kind = match &op {
                    Op::Sigmoid(_) => 0,
                    Op::Tanh(_) => 1,
                    _ => 2,
                };
                self.acc(*a, |ga| {
                    for (j, o) in ga.iter_mut().enumerate() {
                        let yv = y.data()[j];
                        let d = match kind {
                            0 => yv * (1.0 - yv),
                            1 => 1.0 - yv * yv,
                            _ => {
                                if x[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        *o += g.data()[j] * d;
                    }
                });
                self.nodes[i].value = y;
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    let rows = g.rows();
                    self.acc(*p, |gp| {
                        for r in 0..rows {
                            let src = &g.data()[r * total + offset..r * total + offset + c];
                            add_into(&mut gp[r * c..(r + 1) * c], src);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols { src, start } => {
                let sc = self.value(*src).cols();
                let (len, start) = (g.cols(), *start);
                self.acc(*src, |gs| {
                    for r in 0..g.rows() {
                        add_into(&mut gs[r * sc + start..r * sc + start + len], g.row(r));
                    }
                });
            }
            Op::GatherRows { src, rows } => {
                let c = g.cols();
                self.acc(*src, |gs| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut gs[r * c..(r + 1) * c], g.row(k));
                    }
                });
            }
            Op::StackSteps { steps } => {
                let h = g.cols();
                let t_len = steps.len();
                for (t, s) in steps.iter().enumerate() {
                    let b = self.value(*s).rows();
                    self.acc(*s, |gs| {
                        for bi in 0..b {
                            add_into(&mut gs[bi * h..(bi + 1) * h], g.row(bi * t_len + t));
                        }
                    });
                }
            }
            Op::SegmentMean { src, segment } => {
                let (segment, c) = (*segment, g.cols());
                let inv = 1.0 / segment as f64;
                let rows = self.value(*src).rows();
                self.acc(*src, |gs| {
                    for r in 0..rows {
                        let gr = g.row(r / segment);
                        for (o, v) in gs[r * c..(r + 1) * c].iter_mut().zip(gr) {
                            *o += v * inv;
                        }
                    }
                });
            }
            Op::RepeatRows { src, times } => {
                let c = g.cols();
                let times = *times;
                self.acc(*src, |gs| {
                    for r in 0..g.rows() {
                        add_into(&mut gs[(r / times) * c..(r / times + 1) * c], g.row(r));
                    }
                });
            }
            Op::NormalizeRows { src, norms } => {
                let y = std::mem::take(&mut self.nodes[i].value);
                let c = g.cols();
                self.acc(*src, |gs| {
                    for (r, n) in norms.iter().enumerate() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gs[r * c + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
                self.nodes[i].value = y;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, d) = (g.rows(), g.cols());
                let gam = self.nodes[gamma.0].value.data().to_vec();
                let mut sum_dy = vec![0.0; d];
                let mut sum_dy_xhat = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        let dy = g.data()[r * d + c];
                        sum_dy[c] += dy;
                        sum_dy_xhat[c] += dy * xhat[r * d + c];
                    }
                }
                self.acc(*gamma, |gg| add_into(gg, &sum_dy_xhat));
                self.acc(*beta, |gb| add_into(gb, &sum_dy));
                let nf = n as f64;
                self.acc(*x, |gx| {
                    for r in 0..n {
                        for c in 0..d {
                            let dy = g.data()[r * d + c];
                            gx[r * d + c] += gam[c] * inv_std[c] / nf
                                * (nf * dy - sum_dy[c] - xhat[r * d + c] * sum_dy_xhat[c]);
                        }
                    }
                });
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (n, d) = (g.rows(), g.cols());
                let gam = self.nodes[gamma.0].value.data().to_vec();
                let xv = self.nodes[x.0].value.data().to_vec();
                let mut sum_dy = vec![0.0; d];
                let mut sum_dy_xhat = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        let dy = g.data()[r * d + c];
                        sum_dy[c] += dy;
                        sum_dy_xhat[c] += dy * (xv[r * d + c] - mean[c]) * inv_std[c];
                    }
                }
                self.acc(*gamma, |gg| add_into(gg, &sum_dy_xhat));
                self.acc(*beta, |gb| add_into(gb, &sum_dy));
                self.acc(*x, |gx| {
                    for (j, o) in gx.iter_mut().enumerate() {
                        let c = j % d;
                        *o += g.data()[j] * gam[c] * inv_std[c];
                    }
                });
            }
            Op::SumSquaredError { pred, target } => {
                let s = g.data()[0];
                let p = self.nodes[pred.0].value.data().to_vec();
                self.acc(*pred, |gp| {
                    for ((o, pv), t) in gp.iter_mut().zip(&p).zip(target.data()) {
                        *o += 2.0 * (pv - t) * s;
                    }
                });
            }
            Op::WeightedSum { src, weights } => {
                let s = g.data()[0];
                self.acc(*src, |gs| {
                    gs.iter_mut().zip(weights.data()).for_each(|(o, w)| *o += w * s)
                });
            }
        }
        self.nodes[i].op = op;
    }
}

impl Default for Tensor {
    fn default() -> Self {
        Tensor::zeros(&[0])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
