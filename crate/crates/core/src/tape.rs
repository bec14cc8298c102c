//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends one node to the tape, so node order is already a
//! topological order; `backward` walks it once in reverse. Gradients reaching
//! a node along several paths are summed.
//!
//! ```
//! use dgnc_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap().with_grad(true));
//! let y = tape.scale(x, 2.0);
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
//! ```

use std::fmt;

use crate::error::{contract, shape_err, Result};
use crate::tensor::{round_to_mode, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis for 2-D tensors. `Rows` collapses the row index (r×c → 1×c).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    SoftmaxRows,
    Transpose,
    Mean,
    Sum,
    SumAll,
    ConcatCols,
    ConcatRows,
    LayerNorm,
    Powf,
    Mask,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::Transpose => "transpose",
            OpKind::Mean => "mean_over_axis",
            OpKind::Sum => "sum_over_axis",
            OpKind::SumAll => "sum",
            OpKind::ConcatCols => "concat_cols",
            OpKind::ConcatRows => "concat_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Powf => "powf",
            OpKind::Mask => "mask",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        ALL_OPS.iter().copied().find(|k| k.name() == name)
    }
}

const ALL_OPS: [OpKind; 19] = [
    OpKind::Leaf,
    OpKind::MatMul,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Scale,
    OpKind::Relu,
    OpKind::Sigmoid,
    OpKind::SoftmaxRows,
    OpKind::Transpose,
    OpKind::Mean,
    OpKind::Sum,
    OpKind::SumAll,
    OpKind::ConcatCols,
    OpKind::ConcatRows,
    OpKind::LayerNorm,
    OpKind::Powf,
    OpKind::Mask,
    OpKind::CrossEntropy,
];

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    Mean(Var, Axis),
    Sum(Var, Axis),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Powf(Var, f64),
    Mask(Var, Vec<bool>),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Mean(..) => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
            Op::SumAll(_) => OpKind::SumAll,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Powf(..) => OpKind::Powf,
            Op::Mask(..) => OpKind::Mask,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<OpKind>,
}

fn dims2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => shape_err(op, shape, &[2]),
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, with optional transposition of either side.
fn gemm_acc(
    out: &mut [f64],
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    for i in 0..m {
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            if tb {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

#[inline]
fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Deliberately corrupts the adjoint of one operation kind. Used to check
    /// that gradient verification catches a wrong backward rule.
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, mut data: Vec<f64>) -> Var {
        round_to_mode(&mut data);
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self
                .inputs(&op)
                .iter()
                .any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            shape,
            data,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::Transpose(a)
            | Op::Mean(a, _)
            | Op::Sum(a, _)
            | Op::SumAll(a)
            | Op::Powf(a, _)
            | Op::Mask(a, _) => vec![*a],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// Records a tensor as a leaf. Its `requires_grad` flag decides whether
    /// gradients are collected for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        let shape = t.shape().to_vec();
        let v = self.push(Op::Leaf, shape, t.into_data());
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    /// Records a frozen leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad(false))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.shape(a), "matmul")?;
        let (k2, n) = dims2(self.shape(b), "matmul")?;
        if k != k2 {
            return shape_err("matmul", self.shape(a), self.shape(b));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            &mut out,
            self.value(a),
            self.value(b),
            m,
            k,
            n,
            false,
            false,
        );
        Ok(self.push(Op::MatMul(a, b), vec![m, n], out))
    }

    fn broadcast_kind(&self, a: Var, b: Var, op: &'static str) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if let ([r, c], [r2, c2]) = (sa, sb) {
            if *r2 == 1 && c2 == c {
                return Ok(Broadcast::Row);
            }
            if r2 == r && *c2 == 1 {
                return Ok(Broadcast::Col);
            }
        }
        shape_err(op, sa, sb)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Broadcast, Vec<f64>)> {
        let bc = self.broadcast_kind(a, b, op)?;
        let shape = self.shape(a).to_vec();
        let cols = shape.get(1).copied().unwrap_or(1);
        let (av, bv) = (self.value(a), self.value(b));
        let out = av
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let y = match bc {
                    Broadcast::Same => bv[idx],
                    Broadcast::Row => bv[idx % cols],
                    Broadcast::Col => bv[idx / cols],
                };
                f(x, y)
            })
            .collect();
        Ok((bc, out))
    }

    /// Elementwise `a + b`; `b` may also be a 1×c row or r×1 column broadcast
    /// against an r×c `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, out) = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b, bc), shape, out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, out) = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Sub(a, b, bc), shape, out))
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bc, out) = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul(a, b, bc), shape, out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, s), shape, out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Relu(a), shape, out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| stable_sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape, out)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(a), "softmax_rows")?;
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        Ok(self.push(Op::SoftmaxRows(a), vec![r, c], out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.tensor(a).transpose()?;
        let shape = t.shape().to_vec();
        Ok(self.push(Op::Transpose(a), shape, t.into_data()))
    }

    pub fn mean_over_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (r, c) = dims2(self.shape(a), "mean_over_axis")?;
        let n = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        } as f64;
        let (shape, mut out) = reduce(self.value(a), r, c, axis);
        out.iter_mut().for_each(|v| *v /= n);
        Ok(self.push(Op::Mean(a, axis), shape, out))
    }

    pub fn sum_over_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (r, c) = dims2(self.shape(a), "sum_over_axis")?;
        let (shape, out) = reduce(self.value(a), r, c, axis);
        Ok(self.push(Op::Sum(a, axis), shape, out))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Op::SumAll(a), vec![1], vec![s])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return contract("concat_cols of zero tensors");
        };
        let (r, _) = dims2(self.shape(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims2(self.shape(p), "concat_cols")?;
            if pr != r {
                return shape_err("concat_cols", self.shape(first), self.shape(p));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), vec![r, total], out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return contract("concat_rows of zero tensors");
        };
        let (_, c) = dims2(self.shape(first), "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = dims2(self.shape(p), "concat_rows")?;
            if pc != c {
                return shape_err("concat_rows", self.shape(first), self.shape(p));
            }
            rows += pr;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), vec![rows, c], out))
    }

    /// Normalizes each row of `x` over the last axis, then applies the 1×c
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = dims2(self.shape(x), "layer_norm")?;
        for p in [gain, bias] {
            if self.shape(p) != [1, c] {
                return shape_err("layer_norm", self.shape(x), self.shape(p));
            }
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push(op, vec![r, c], out))
    }

    /// Elementwise `x^p`; inputs must be positive when `p` is not an integer.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let out = self.value(a).iter().map(|x| x.powf(p)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Powf(a, p), shape, out)
    }

    /// Zeroes entries where `keep` is false; gradient flows only through kept
    /// entries.
    pub fn mask(&mut self, a: Var, keep: Vec<bool>) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return shape_err("mask", self.shape(a), &[keep.len()]);
        }
        let out = self
            .value(a)
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x } else { 0.0 })
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mask(a, keep), shape, out))
    }

    /// `-log softmax(logits)[label]` in log-sum-exp form.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if label >= z.len() {
            return contract(format!("label {label} out of range for {} logits", z.len()));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let probs = z.iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - z[label];
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            vec![1],
            vec![loss],
        ))
    }

    /// Hash of every branch decision taken in the forward pass (ReLU signs
    /// and sparsity masks). Two evaluations with equal signatures lie on the
    /// same smooth piece of the program.
    pub fn decision_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |bit: bool| {
            h ^= bit as u64 + 1;
            h = h.wrapping_mul(0x100000001b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => self.nodes[a.0].data.iter().for_each(|&x| mix(x > 0.0)),
                Op::Mask(_, keep) => keep.iter().for_each(|&k| mix(k)),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a one-element `loss`. Gradients of earlier sweeps
    /// are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let mut contributions = self.adjoints(i, &g);
            if self.fault == Some(self.nodes[i].op.kind()) {
                for (_, c) in contributions.iter_mut() {
                    c.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (var, c) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(buf) => buf.iter_mut().zip(&c).for_each(|(b, x)| *b += x),
                    slot @ None => *slot = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` takes
    /// part in differentiation.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        if !self.nodes.get(v.0)?.requires_grad {
            return None;
        }
        self.grads.get(v.0)?.as_deref()
    }

    fn adjoints(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].data.as_slice();
        let shp = |v: Var| self.nodes[v.0].shape.as_slice();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                let mut da = vec![0.0; m * k];
                gemm_acc(&mut da, g, val(*b), m, n, k, false, true);
                let mut db = vec![0.0; k * n];
                gemm_acc(&mut db, val(*a), g, k, m, n, true, false);
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b, bc) => {
                let db = reduce_broadcast(g, &node.shape, *bc);
                vec![(*a, g.to_vec()), (*b, db)]
            }
            Op::Sub(a, b, bc) => {
                let mut db = reduce_broadcast(g, &node.shape, *bc);
                db.iter_mut().for_each(|v| *v = -*v);
                vec![(*a, g.to_vec()), (*b, db)]
            }
            Op::Mul(a, b, bc) => {
                let cols = node.shape.get(1).copied().unwrap_or(1);
                let (av, bv) = (val(*a), val(*b));
                let bat = |idx: usize| match bc {
                    Broadcast::Same => bv[idx],
                    Broadcast::Row => bv[idx % cols],
                    Broadcast::Col => bv[idx / cols],
                };
                let da = g
                    .iter()
                    .enumerate()
                    .map(|(idx, gv)| gv * bat(idx))
                    .collect();
                let gb: Vec<f64> = g.iter().zip(av).map(|(gv, x)| gv * x).collect();
                vec![(*a, da), (*b, reduce_broadcast(&gb, &node.shape, *bc))]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|v| v * s).collect())],
            Op::Relu(a) => {
                let da = g
                    .iter()
                    .zip(val(*a))
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(*a, da)]
            }
            Op::Sigmoid(a) => {
                let da = g
                    .iter()
                    .zip(&node.data)
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                vec![(*a, da)]
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let y = &node.data;
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c..(i + 1) * c;
                    let dot: f64 = g[s.clone()]
                        .iter()
                        .zip(&y[s.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for j in s {
                        da[j] = y[j] * (g[j] - dot);
                    }
                }
                vec![(*a, da)]
            }
            Op::Transpose(a) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = g[i * c + j];
                    }
                }
                vec![(*a, da)]
            }
            Op::Mean(a, axis) | Op::Sum(a, axis) => {
                let (r, c) = (shp(*a)[0], shp(*a)[1]);
                let scale = match (&node.op, axis) {
                    (Op::Mean(..), Axis::Rows) => 1.0 / r as f64,
                    (Op::Mean(..), Axis::Cols) => 1.0 / c as f64,
                    _ => 1.0,
                };
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let gv = match axis {
                            Axis::Rows => g[j],
                            Axis::Cols => g[i],
                        };
                        da[i * c + j] = gv * scale;
                    }
                }
                vec![(*a, da)]
            }
            Op::SumAll(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::ConcatCols(parts) => {
                let (r, total) = (node.shape[0], node.shape[1]);
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = shp(p)[1];
                    let mut dp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    out.push((p, dp));
                }
                out
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = val(p).len();
                    out.push((p, g[offset..offset + n].to_vec()));
                    offset += n;
                }
                out
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = (node.shape[0], node.shape[1]);
                let gv = val(*gain);
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..c {
                        let k = i * c + j;
                        let d = g[k] * gv[j];
                        mean_d += d;
                        mean_dh += d * xhat[k];
                        dg[j] += g[k] * xhat[k];
                        db[j] += g[k];
                    }
                    mean_d /= c as f64;
                    mean_dh /= c as f64;
                    for j in 0..c {
                        let k = i * c + j;
                        dx[k] = inv_std[i] * (g[k] * gv[j] - mean_d - xhat[k] * mean_dh);
                    }
                }
                vec![(*x, dx), (*gain, dg), (*bias, db)]
            }
            Op::Powf(a, p) => {
                let da = g
                    .iter()
                    .zip(val(*a))
                    .map(|(gv, x)| gv * p * x.powf(p - 1.0))
                    .collect();
                vec![(*a, da)]
            }
            Op::Mask(a, keep) => {
                let da = g
                    .iter()
                    .zip(keep)
                    .map(|(gv, &k)| if k { *gv } else { 0.0 })
                    .collect();
                vec![(*a, da)]
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let da = probs
                    .iter()
                    .enumerate()
                    .map(|(j, p)| g[0] * (p - if j == *label { 1.0 } else { 0.0 }))
                    .collect();
                vec![(*logits, da)]
            }
        }
    }
}

fn reduce(x: &[f64], r: usize, c: usize, axis: Axis) -> (Vec<usize>, Vec<f64>) {
    match axis {
        Axis::Rows => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += x[i * c + j];
                }
            }
            (vec![1, c], out)
        }
        Axis::Cols => {
            let out = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
            (vec![r, 1], out)
        }
    }
}

fn reduce_broadcast(g: &[f64], shape: &[usize], bc: Broadcast) -> Vec<f64> {
    match bc {
        Broadcast::Same => g.to_vec(),
        Broadcast::Row => reduce(g, shape[0], shape[1], Axis::Rows).1,
        Broadcast::Col => reduce(g, shape[0], shape[1], Axis::Cols).1,
    }
}
