use std::cell::RefCell;

use super::rng::DropoutRng;
use super::tensor::{gemm, Tensor};
use super::{gelu_scalar, sigmoid_scalar};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(usize),
    Sigmoid(usize),
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    MeanRows(usize),
    Sum(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    Bce {
        p: usize,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Option<Vec<Option<Vec<f64>>>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::ShapeMismatch(format!("{what} expects a 2-D tensor, got {s:?}"))),
    }
}

/// Gradient buffer of node `i`, allocated on first use; `None` for nodes
/// that do not require a gradient.
fn acc<'a>(lower: &'a mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[i].requires_grad {
        return None;
    }
    let n = nodes[i].value.numel();
    Some(lower[i].get_or_insert_with(|| vec![0.0; n]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input: receives a gradient on backward.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Gradient of the last backward pass with respect to `v`, if `v`
    /// participates in the loss and requires a gradient.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.as_ref()?.get(v.id)?.as_ref()?;
        let shape = self.nodes.borrow()[v.id].value.shape().to_vec();
        Tensor::new(shape, g.clone()).ok()
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&self) {
        self.grads.borrow_mut().take();
    }

    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Autodiff("loss belongs to a different tape".into()));
        }
        if self.grads.borrow().is_some() {
            return Err(Error::Autodiff(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be a scalar, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            let val = |i: usize| nodes[i].value.data();
            let out = node.value.data();

            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::MatMul(a, b) => {
                    let (m, k) = nodes[a].value.as_matrix();
                    let n = nodes[b].value.as_matrix().1;
                    if let Some(da) = acc(lower, &nodes, a) {
                        gemm(m, n, k, g, false, val(b), true, da, true);
                    }
                    if let Some(db) = acc(lower, &nodes, b) {
                        gemm(k, m, n, val(a), true, g, false, db, true);
                    }
                }
                &Op::Transpose(a) => {
                    let (r, c) = nodes[a].value.as_matrix();
                    if let Some(da) = acc(lower, &nodes, a) {
                        for i in 0..r {
                            for j in 0..c {
                                da[i * c + j] += g[j * r + i];
                            }
                        }
                    }
                }
                &Op::Add(a, b) => {
                    for i in [a, b] {
                        if let Some(d) = acc(lower, &nodes, i) {
                            d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                &Op::AddBias(a, bias) => {
                    if let Some(da) = acc(lower, &nodes, a) {
                        da.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                    if let Some(db) = acc(lower, &nodes, bias) {
                        let n = db.len();
                        for row in g.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                &Op::Mul(a, b) => {
                    if let Some(da) = acc(lower, &nodes, a) {
                        for ((d, g), y) in da.iter_mut().zip(g).zip(val(b)) {
                            *d += g * y;
                        }
                    }
                    if let Some(db) = acc(lower, &nodes, b) {
                        for ((d, g), x) in db.iter_mut().zip(g).zip(val(a)) {
                            *d += g * x;
                        }
                    }
                }
                &Op::Scale(a, s) => {
                    if let Some(da) = acc(lower, &nodes, a) {
                        da.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
                    }
                }
                &Op::Softmax(a) => {
                    let c = node.value.as_matrix().1;
                    if let Some(da) = acc(lower, &nodes, a) {
                        for ((drow, grow), yrow) in
                            da.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c))
                        {
                            let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                            for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += y * (g - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = node.value.as_matrix().1;
                    let gam = val(*gamma);
                    if let Some(dx) = acc(lower, &nodes, *x) {
                        let mut gy = vec![0.0; d];
                        for (r, ((dxr, gr), xr)) in dx
                            .chunks_mut(d)
                            .zip(g.chunks(d))
                            .zip(xhat.chunks(d))
                            .enumerate()
                        {
                            gy.iter_mut()
                                .zip(gr)
                                .zip(gam)
                                .for_each(|((o, g), w)| *o = g * w);
                            let s1: f64 = gy.iter().sum();
                            let s2: f64 = gy.iter().zip(xr).map(|(a, b)| a * b).sum();
                            let k = rstd[r] / d as f64;
                            for ((o, gyi), xh) in dxr.iter_mut().zip(&gy).zip(xr) {
                                *o += k * (d as f64 * gyi - s1 - xh * s2);
                            }
                        }
                    }
                    if let Some(dg) = acc(lower, &nodes, *gamma) {
                        for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for ((o, g), xh) in dg.iter_mut().zip(gr).zip(xr) {
                                *o += g * xh;
                            }
                        }
                    }
                    if let Some(db) = acc(lower, &nodes, *beta) {
                        for gr in g.chunks(d) {
                            db.iter_mut().zip(gr).for_each(|(o, g)| *o += g);
                        }
                    }
                }
                &Op::Gelu(a) => {
                    if let Some(da) = acc(lower, &nodes, a) {
                        for ((d, g), &x) in da.iter_mut().zip(g).zip(val(a)) {
                            let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                            let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                            *d += g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                        }
                    }
                }
                &Op::Sigmoid(a) => {
                    if let Some(da) = acc(lower, &nodes, a) {
                        for ((d, g), y) in da.iter_mut().zip(g).zip(out) {
                            *d += g * y * (1.0 - y);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(dx) = acc(lower, &nodes, *x) {
                        for ((d, g), m) in dx.iter_mut().zip(g).zip(mask) {
                            *d += g * m;
                        }
                    }
                }
                &Op::MeanRows(a) => {
                    let (r, c) = nodes[a].value.as_matrix();
                    if let Some(da) = acc(lower, &nodes, a) {
                        let inv = 1.0 / r as f64;
                        for row in da.chunks_mut(c) {
                            row.iter_mut().zip(g).for_each(|(d, g)| *d += g * inv);
                        }
                    }
                }
                &Op::Sum(a) => {
                    if let Some(da) = acc(lower, &nodes, a) {
                        da.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                &Op::SliceCols { x, start } => {
                    let c = nodes[x].value.as_matrix().1;
                    let w = node.value.as_matrix().1;
                    if let Some(dx) = acc(lower, &nodes, x) {
                        for (drow, grow) in dx.chunks_mut(c).zip(g.chunks(w)) {
                            drow[start..start + w]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.as_matrix().1;
                    let mut offset = 0;
                    for &p in parts {
                        let w = nodes[p].value.as_matrix().1;
                        if let Some(dp) = acc(lower, &nodes, p) {
                            for (drow, grow) in dp.chunks_mut(w).zip(g.chunks(total)) {
                                drow.iter_mut()
                                    .zip(&grow[offset..offset + w])
                                    .for_each(|(d, g)| *d += g);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Bce { p, target } => {
                    let n = target.len() as f64;
                    let probs = val(*p);
                    if let Some(dp) = acc(lower, &nodes, *p) {
                        for ((d, &q), &t) in dp.iter_mut().zip(probs).zip(target) {
                            if q > BCE_CLAMP && q < 1.0 - BCE_CLAMP {
                                *d += g[0] * (-t / q + (1.0 - t) / (1.0 - q)) / n;
                            }
                        }
                    }
                }
            }
        }
        drop(nodes);
        *self.grads.borrow_mut() = Some(grads);
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn value(self) -> Tensor {
        self.tape.value(self)
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(self) -> Option<Tensor> {
        self.tape.grad(self)
    }

    fn check_tape(self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Autodiff("operands live on different tapes".into()))
        }
    }

    /// Elementwise map that records `op`.
    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            Tensor::from_fn(x.shape(), |i| f(x.data()[i]))
        };
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn same_shape(self, other: Var<'t>, what: &str) -> Result<()> {
        self.check_tape(other)?;
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")));
        }
        Ok(())
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (m, k) = dims2(a, "matmul")?;
            let (k2, n) = dims2(b, "matmul")?;
            if k != k2 {
                return Err(Error::ShapeMismatch(format!(
                    "matmul inner dimensions differ: {m}x{k} * {k2}x{n}"
                )));
            }
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
            Tensor::new(vec![m, n], c)?
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = dims2(x, "transpose")?;
            let d = x.data();
            Tensor::from_fn(&[c, r], |i| d[(i % r) * c + i / r])
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "add")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i])
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Add(self.id, other.id), rg))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(bias)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let n = a.as_matrix().1;
            if b.shape() != [n] {
                return Err(Error::ShapeMismatch(format!(
                    "bias {:?} does not match {} columns",
                    b.shape(),
                    n
                )));
            }
            Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i % n])
        };
        let rg = self.tape.rg(&[self.id, bias.id]);
        Ok(self.tape.push(value, Op::AddBias(self.id, bias.id), rg))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(other, "mul")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            Tensor::from_fn(a.shape(), |i| a.data()[i] * b.data()[i])
        };
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Mul(self.id, other.id), rg))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let c = x.as_matrix().1;
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(c) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
            Tensor::new(x.shape().to_vec(), out).expect("same shape")
        };
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, Op::Softmax(self.id), rg)
    }

    /// Per-row standardization over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.check_tape(gamma)?;
        self.check_tape(beta)?;
        let (value, xhat, rstd) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let d = x.as_matrix().1;
            let (gm, bt) = (&nodes[gamma.id].value, &nodes[beta.id].value);
            if gm.shape() != [d] || bt.shape() != [d] {
                return Err(Error::ShapeMismatch(format!(
                    "layer norm over {d} features got gamma {:?}, beta {:?}",
                    gm.shape(),
                    bt.shape()
                )));
            }
            let mut xhat = Vec::with_capacity(x.numel());
            let mut rstd = Vec::new();
            let mut out = Vec::with_capacity(x.numel());
            for row in x.data().chunks(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let r = 1.0 / (var + eps).sqrt();
                rstd.push(r);
                for (j, v) in row.iter().enumerate() {
                    let h = (v - mean) * r;
                    xhat.push(h);
                    out.push(h * gm.data()[j] + bt.data()[j]);
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, xhat, rstd)
        };
        let rg = self.tape.rg(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu(self.id), gelu_scalar)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid_scalar)
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)`. Identity
    /// (and no node) when not training.
    pub fn dropout(self, rate: f64, training: bool, rng: &DropoutRng) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(self);
        }
        let stream = rng.next_stream();
        let keep = 1.0 / (1.0 - rate);
        let n = self.tape.nodes.borrow()[self.id].value.numel();
        let mask: Vec<f64> = (0..n as u64)
            .map(|i| {
                if DropoutRng::uniform(stream, i) < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            Tensor::from_fn(x.shape(), |i| x.data()[i] * mask[i])
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::Dropout { x: self.id, mask }, rg))
    }

    /// Mean over rows: `m x n -> 1 x n`.
    pub fn mean_rows(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = x.as_matrix();
            let mut out = vec![0.0; c];
            for row in x.data().chunks(c) {
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Tensor::new(vec![1, c], out).expect("positive")
        };
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, Op::MeanRows(self.id), rg)
    }

    pub fn sum(self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            Tensor::scalar(nodes[self.id].value.data().iter().sum())
        };
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = dims2(x, "slice_cols")?;
            if len == 0 || start + len > c {
                return Err(Error::ShapeMismatch(format!(
                    "column slice {start}..{} out of {c}",
                    start + len
                )));
            }
            let d = x.data();
            Tensor::from_fn(&[r, len], |i| d[(i / len) * c + start + i % len])
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(value, Op::SliceCols { x: self.id, start }, rg))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concat of zero tensors".into()))?;
        for p in parts {
            first.check_tape(*p)?;
        }
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let rows = dims2(&nodes[first.id].value, "concat_cols")?.0;
            let mut widths = Vec::new();
            for p in parts {
                let (r, c) = dims2(&nodes[p.id].value, "concat_cols")?;
                if r != rows {
                    return Err(Error::ShapeMismatch(format!(
                        "concat_cols row counts differ: {rows} vs {r}"
                    )));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    out.extend_from_slice(&nodes[p.id].value.data()[i * w..(i + 1) * w]);
                }
            }
            Tensor::new(vec![rows, total], out)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        Ok(tape.push(value, Op::ConcatCols(ids), rg))
    }

    /// Mean binary cross-entropy against a constant target; probabilities
    /// are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(self, target: &[f64]) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let p = &nodes[self.id].value;
            if p.numel() != target.len() {
                return Err(Error::ShapeMismatch(format!(
                    "bce: {} probabilities vs {} targets",
                    p.numel(),
                    target.len()
                )));
            }
            let n = target.len() as f64;
            let loss: f64 = p
                .data()
                .iter()
                .zip(target)
                .map(|(&q, &t)| {
                    let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
                })
                .sum::<f64>()
                / n;
            Tensor::scalar(loss)
        };
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::Bce {
                p: self.id,
                target: target.to_vec(),
            },
            rg,
        ))
    }
}
