//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! A [`Tape`] records every differentiable operation of one forward pass.
//! Calling [`Tape::backward`] on a scalar output replays the record in
//! reverse and accumulates gradients for every leaf registered with
//! `requires_grad`. One tape belongs to one forward/backward pass; for
//! inference just build a tape and never call backward.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const SMAPE_GUARD: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Add(usize, usize),
    AddBias(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Transpose(usize),
    SliceCols {
        src: usize,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<usize>),
    GatherRows {
        src: usize,
        indices: Vec<usize>,
    },
    PadRows {
        src: usize,
        src_rows: usize,
    },
    Reshape(usize),
    SoftmaxLastDim(usize),
    Gelu(usize),
    LayerNorm {
        src: usize,
        gain: usize,
        bias: usize,
    },
    MeanRows(usize),
    MeanAll(usize),
    SmapeLoss {
        pred: usize,
        truth: Tensor,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass for reverse-mode differentiation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients collected by one backward pass, indexed by tape position.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`, if any flowed to it.
    pub fn wrt(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads[v.id].as_ref().map(|g| {
            Tensor::new(self.shapes[v.id].clone(), g.clone())
                .expect("gradient buffer matches value shape")
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers a leaf value; it participates in backward when the
    /// tensor was marked `requires_grad`.
    pub fn input(&self, t: Tensor) -> Var<'_> {
        let needs = t.wants_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Propagates d(loss)/d(node) for every node, in reverse tape order.
    /// `loss` must be a 1-element tensor on this tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::InvalidArgument(
                "backward requires a scalar output".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            if grads[id].is_none() || !nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, add: impl Fn(&mut [f64])) {
    let buf = grads[id].get_or_insert_with(|| vec![0.0; len]);
    add(buf);
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let wants = |i: usize| nodes[i].needs_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &side in &[*a, *b] {
                if wants(side) {
                    accum(grads, side, g.len(), |buf| {
                        for (o, gi) in buf.iter_mut().zip(g) {
                            *o += gi;
                        }
                    });
                }
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accum(grads, *a, g.len(), |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
            if wants(*b) {
                accum(grads, *b, g.len(), |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o -= gi;
                    }
                });
            }
        }
        Op::AddBias(x, b) => {
            let cols = val(*x).cols();
            if wants(*x) {
                accum(grads, *x, g.len(), |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
            if wants(*b) {
                accum(grads, *b, cols, |buf| {
                    for (i, gi) in g.iter().enumerate() {
                        buf[i % cols] += gi;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                accum(grads, *a, g.len(), |buf| {
                    for ((o, gi), bi) in buf.iter_mut().zip(g).zip(bv.data()) {
                        *o += gi * bi;
                    }
                });
            }
            if wants(*b) {
                accum(grads, *b, g.len(), |buf| {
                    for ((o, gi), ai) in buf.iter_mut().zip(g).zip(av.data()) {
                        *o += gi * ai;
                    }
                });
            }
        }
        Op::Scale(x, f) => {
            if wants(*x) {
                accum(grads, *x, g.len(), |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi * f;
                    }
                });
            }
        }
        Op::Matmul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if wants(*a) {
                // dA = G * B^T
                accum(grads, *a, m * k, |buf| {
                    for i in 0..m {
                        for j in 0..k {
                            let mut s = 0.0;
                            for c in 0..n {
                                s += g[i * n + c] * bv.data()[j * n + c];
                            }
                            buf[i * k + j] += s;
                        }
                    }
                });
            }
            if wants(*b) {
                // dB = A^T * G
                accum(grads, *b, k * n, |buf| {
                    for i in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for r in 0..m {
                                s += av.data()[r * k + i] * g[r * n + j];
                            }
                            buf[i * n + j] += s;
                        }
                    }
                });
            }
        }
        Op::Transpose(x) => {
            if wants(*x) {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                accum(grads, *x, r * c, |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
        }
        Op::SliceCols { src, start, len } => {
            if wants(*src) {
                let (r, c) = (val(*src).rows(), val(*src).cols());
                accum(grads, *src, r * c, |buf| {
                    for i in 0..r {
                        for j in 0..*len {
                            buf[i * c + start + j] += g[i * len + j];
                        }
                    }
                });
            }
        }
        Op::ConcatCols(parts) => {
            let rows = nodes[id].value.rows();
            let total = nodes[id].value.cols();
            let mut offset = 0usize;
            for &p in parts {
                let pc = val(p).cols();
                if wants(p) {
                    accum(grads, p, rows * pc, |buf| {
                        for i in 0..rows {
                            for j in 0..pc {
                                buf[i * pc + j] += g[i * total + offset + j];
                            }
                        }
                    });
                }
                offset += pc;
            }
        }
        Op::GatherRows { src, indices } => {
            if wants(*src) {
                let (r, c) = (val(*src).rows(), val(*src).cols());
                accum(grads, *src, r * c, |buf| {
                    for (out_row, &src_row) in indices.iter().enumerate() {
                        for j in 0..c {
                            buf[src_row * c + j] += g[out_row * c + j];
                        }
                    }
                });
            }
        }
        Op::PadRows { src, src_rows } => {
            if wants(*src) {
                let c = val(*src).cols();
                accum(grads, *src, src_rows * c, |buf| {
                    buf.iter_mut()
                        .zip(&g[..src_rows * c])
                        .for_each(|(o, gi)| *o += gi);
                });
            }
        }
        Op::Reshape(x) => {
            if wants(*x) {
                accum(grads, *x, g.len(), |buf| {
                    for (o, gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                });
            }
        }
        Op::SoftmaxLastDim(x) => {
            if wants(*x) {
                let y = &nodes[id].value;
                let cols = y.cols();
                accum(grads, *x, y.len(), |buf| {
                    for (row, chunk) in y.data().chunks(cols).enumerate() {
                        let grow = &g[row * cols..(row + 1) * cols];
                        let dot: f64 = grow.iter().zip(chunk).map(|(gi, yi)| gi * yi).sum();
                        for j in 0..cols {
                            buf[row * cols + j] += chunk[j] * (grow[j] - dot);
                        }
                    }
                });
            }
        }
        Op::Gelu(x) => {
            if wants(*x) {
                let xv = val(*x);
                accum(grads, *x, g.len(), |buf| {
                    for ((o, gi), &xi) in buf.iter_mut().zip(g).zip(xv.data()) {
                        *o += gi * gelu_derivative(xi);
                    }
                });
            }
        }
        Op::LayerNorm { src, gain, bias } => {
            let xv = val(*src);
            let gv = val(*gain);
            let cols = xv.cols();
            let rows = xv.rows();
            // Recompute per-row statistics rather than saving them.
            let mut xhat = vec![0.0; xv.len()];
            let mut inv_std = vec![0.0; rows];
            for r in 0..rows {
                let row = &xv.data()[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[r] = inv;
                for j in 0..cols {
                    xhat[r * cols + j] = (row[j] - mean) * inv;
                }
            }
            if wants(*src) {
                accum(grads, *src, xv.len(), |buf| {
                    for r in 0..rows {
                        let grow = &g[r * cols..(r + 1) * cols];
                        let hrow = &xhat[r * cols..(r + 1) * cols];
                        let gx: Vec<f64> = (0..cols).map(|j| grow[j] * gv.data()[j]).collect();
                        let m1 = gx.iter().sum::<f64>() / cols as f64;
                        let m2 = gx
                            .iter()
                            .zip(hrow)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / cols as f64;
                        for j in 0..cols {
                            buf[r * cols + j] += inv_std[r] * (gx[j] - m1 - hrow[j] * m2);
                        }
                    }
                });
            }
            if wants(*gain) {
                accum(grads, *gain, cols, |buf| {
                    for r in 0..rows {
                        for j in 0..cols {
                            buf[j] += g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                });
            }
            if wants(*bias) {
                accum(grads, *bias, cols, |buf| {
                    for r in 0..rows {
                        for j in 0..cols {
                            buf[j] += g[r * cols + j];
                        }
                    }
                });
            }
        }
        Op::MeanRows(x) => {
            if wants(*x) {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                let scale = 1.0 / r as f64;
                accum(grads, *x, r * c, |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j] * scale;
                        }
                    }
                });
            }
        }
        Op::MeanAll(x) => {
            if wants(*x) {
                let n = val(*x).len();
                let scale = g[0] / n as f64;
                accum(grads, *x, n, |buf| {
                    for o in buf.iter_mut() {
                        *o += scale;
                    }
                });
            }
        }
        Op::SmapeLoss { pred, truth } => {
            if wants(*pred) {
                let pv = val(*pred);
                let n = pv.len() as f64;
                accum(grads, *pred, pv.len(), |buf| {
                    for (i, (&p, &t)) in pv.data().iter().zip(truth.data()).enumerate() {
                        let v = t.abs() + p.abs();
                        if v < SMAPE_GUARD {
                            continue; // guarded term: zero gradient
                        }
                        let u = (t - p).abs();
                        let du = -sign(t - p);
                        let dv = sign(p);
                        buf[i] += g[0] * (200.0 / n) * (du * v - u * dv) / (v * v);
                    }
                });
            }
        }
        Op::CrossEntropy { logits, labels } => {
            if wants(*logits) {
                let lv = val(*logits);
                let (rows, cols) = (lv.rows(), lv.cols());
                accum(grads, *logits, lv.len(), |buf| {
                    for r in 0..rows {
                        let row = &lv.data()[r * cols..(r + 1) * cols];
                        let sm = stable_softmax(row);
                        for j in 0..cols {
                            let onehot = if labels[r] == j { 1.0 } else { 0.0 };
                            buf[r * cols + j] += g[0] * (sm[j] - onehot) / rows as f64;
                        }
                    }
                });
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn stable_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    /// The tape this value lives on.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn binary_same_shape(
        self,
        rhs: Var<'t>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: op_name,
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            finite(op_name, a.shape().to_vec(), data)?
        };
        let needs = self.tape.needs(&[self.id, rhs.id]);
        Ok(self.tape.push(out, op(self.id, rhs.id), needs))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary_same_shape(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    /// Adds a length-`cols` bias vector to every row.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let b = &nodes[bias.id].value;
            if b.len() != x.cols() {
                return Err(Error::ShapeMismatch {
                    op: "add_bias",
                    left: x.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let cols = x.cols();
            let data: Vec<f64> = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + b.data()[i % cols])
                .collect();
            finite("add_bias", x.shape().to_vec(), data)?
        };
        let needs = self.tape.needs(&[self.id, bias.id]);
        Ok(self.tape.push(out, Op::AddBias(self.id, bias.id), needs))
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let data: Vec<f64> = x.data().iter().map(|&v| v * factor).collect();
            finite("scale", x.shape().to_vec(), data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Scale(self.id, factor), needs))
    }

    /// Matrix product; inner dimensions must agree.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            if a.cols() != b.rows() {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for c in 0..k {
                        s += a.data()[i * k + c] * b.data()[c * n + j];
                    }
                    data[i * n + j] = s;
                }
            }
            finite("matmul", vec![m, n], data)?
        };
        let needs = self.tape.needs(&[self.id, rhs.id]);
        Ok(self.tape.push(out, Op::Matmul(self.id, rhs.id), needs))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = (x.rows(), x.cols());
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = x.data()[i * c + j];
                }
            }
            finite("transpose", vec![c, r], data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Transpose(self.id), needs))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = (x.rows(), x.cols());
            if start + len > c || len == 0 {
                return Err(Error::InvalidArgument(format!(
                    "slice_cols [{start}, {start}+{len}) out of 0..{c}"
                )));
            }
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&x.data()[i * c + start..i * c + start + len]);
            }
            finite("slice_cols", vec![r, len], data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::SliceCols {
                src: self.id,
                start,
                len,
            },
            needs,
        ))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of zero parts".into()))?
            .tape;
        let out = {
            let nodes = tape.nodes.borrow();
            let rows = nodes[parts[0].id].value.rows();
            let total: usize = parts.iter().map(|p| nodes[p.id].value.cols()).sum();
            if parts.iter().any(|p| nodes[p.id].value.rows() != rows) {
                return Err(Error::InvalidArgument(
                    "concat_cols requires equal row counts".into(),
                ));
            }
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for p in parts {
                    let v = &nodes[p.id].value;
                    let c = v.cols();
                    data.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
                }
            }
            finite("concat_cols", vec![rows, total], data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = tape.needs(&ids);
        Ok(tape.push(out, Op::ConcatCols(ids), needs))
    }

    /// Copies the given rows into a new matrix; duplicates allowed.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = (x.rows(), x.cols());
            if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
                return Err(Error::InvalidArgument(format!(
                    "gather_rows index {bad} out of 0..{r}"
                )));
            }
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
            }
            finite("gather_rows", vec![indices.len(), c], data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::GatherRows {
                src: self.id,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    /// Appends zero rows until the matrix has `total_rows` rows.
    pub fn pad_rows(self, total_rows: usize) -> Result<Var<'t>> {
        let (src_rows, out) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = (x.rows(), x.cols());
            if total_rows < r {
                return Err(Error::InvalidArgument(format!(
                    "pad_rows target {total_rows} below current {r}"
                )));
            }
            let mut data = x.data().to_vec();
            data.resize(total_rows * c, 0.0);
            (r, finite("pad_rows", vec![total_rows, c], data)?)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::PadRows {
                src: self.id,
                src_rows,
            },
            needs,
        ))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if shape.iter().product::<usize>() != x.len() {
                return Err(Error::BadTensor {
                    shape,
                    len: x.len(),
                });
            }
            Tensor::new(shape, x.data().to_vec())?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Reshape(self.id), needs))
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_lastdim(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let cols = x.cols();
            if cols == 0 {
                return Err(Error::InvalidArgument("softmax over empty dimension".into()));
            }
            let mut data = Vec::with_capacity(x.len());
            for row in x.data().chunks(cols) {
                data.extend(stable_softmax(row));
            }
            finite("softmax_lastdim", x.shape().to_vec(), data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::SoftmaxLastDim(self.id), needs))
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let data: Vec<f64> = x.data().iter().map(|&v| gelu_value(v)).collect();
            finite("gelu", x.shape().to_vec(), data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Gelu(self.id), needs))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let gv = &nodes[gain.id].value;
            let bv = &nodes[bias.id].value;
            let cols = x.cols();
            if gv.len() != cols || bv.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    left: x.shape().to_vec(),
                    right: gv.shape().to_vec(),
                });
            }
            let mut data = Vec::with_capacity(x.len());
            for row in x.data().chunks(cols) {
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for j in 0..cols {
                    data.push((row[j] - mean) * inv * gv.data()[j] + bv.data()[j]);
                }
            }
            finite("layer_norm", x.shape().to_vec(), data)?
        };
        let needs = self.tape.needs(&[self.id, gain.id, bias.id]);
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                src: self.id,
                gain: gain.id,
                bias: bias.id,
            },
            needs,
        ))
    }

    /// Mean over rows, producing a 1 x cols matrix.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = (x.rows(), x.cols());
            let mut data = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    data[j] += x.data()[i * c + j];
                }
            }
            for v in data.iter_mut() {
                *v /= r as f64;
            }
            finite("mean_rows", vec![1, c], data)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::MeanRows(self.id), needs))
    }

    /// Mean of all elements, producing a scalar.
    pub fn mean_all(self) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let m = x.data().iter().sum::<f64>() / x.len() as f64;
            finite("mean_all", vec![1], vec![m])?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::MeanAll(self.id), needs))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(self, truth: &Tensor) -> Result<Var<'t>> {
        let t = self.tape.constant(truth.clone());
        self.sub(t)?.square()?.mean_all()
    }

    fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    /// Symmetric MAPE loss (0..200) against a constant target; terms with
    /// |truth| + |pred| below the guard contribute zero value and gradient.
    pub fn smape_loss(self, truth: &Tensor) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let p = &nodes[self.id].value;
            if p.shape() != truth.shape() {
                return Err(Error::ShapeMismatch {
                    op: "smape_loss",
                    left: p.shape().to_vec(),
                    right: truth.shape().to_vec(),
                });
            }
            let n = p.len() as f64;
            let mut acc = 0.0;
            for (&pv, &tv) in p.data().iter().zip(truth.data()) {
                let v = tv.abs() + pv.abs();
                if v >= SMAPE_GUARD {
                    acc += (tv - pv).abs() / v;
                }
            }
            finite("smape_loss", vec![1], vec![200.0 * acc / n])?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::SmapeLoss {
                pred: self.id,
                truth: truth.clone(),
            },
            needs,
        ))
    }

    /// Mean cross-entropy of row-wise logits against class labels.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (rows, cols) = (x.rows(), x.cols());
            if labels.len() != rows {
                return Err(Error::InvalidArgument(format!(
                    "cross_entropy: {} labels for {} rows",
                    labels.len(),
                    rows
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
                return Err(Error::InvalidArgument(format!(
                    "label {bad} out of range for {cols} classes"
                )));
            }
            let mut acc = 0.0;
            for (r, row) in x.data().chunks(cols).enumerate() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                acc += lse - row[labels[r]];
            }
            finite("cross_entropy", vec![1], vec![acc / rows as f64])?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            out,
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }
}

fn finite(op: &'static str, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: Vec<f64>) -> Tensor {
        Tensor::matrix(r, c, v).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let i = tape.constant(mat(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let v = tape.constant(mat(2, 1, vec![3.0, 4.0]));
        let out = i.matmul(v).unwrap();
        assert_eq!(out.value().data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let tape = Tape::new();
        let a = tape.constant(mat(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(mat(2, 1, vec![5.0, 6.0]));
        let out = a.matmul(b).unwrap();
        assert_eq!(out.value().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::zeros(vec![3, 3]));
        let b = tape.constant(mat(3, 2, (0..6).map(|v| v as f64 + 1.0).collect()));
        let out = z.matmul(b).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let tape = Tape::new();
        let a = tape.constant(mat(2, 3, vec![0.0; 6]));
        let b = tape.constant(mat(2, 2, vec![0.0; 4]));
        assert!(matches!(
            a.matmul(b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn softmax_uniform() {
        let tape = Tape::new();
        let x = tape.constant(mat(1, 3, vec![0.0, 0.0, 0.0]));
        let y = x.softmax_lastdim().unwrap().value();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_magnitude_stable() {
        let tape = Tape::new();
        let x = tape.constant(mat(1, 2, vec![1000.0, 0.0]));
        let y = x.softmax_lastdim().unwrap().value();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] >= 0.0 && y.data()[1] < 1e-12);
    }

    #[test]
    fn softmax_log_ratio_case() {
        // [ln 1, ln 2, ln 3] -> [1/6, 2/6, 3/6]
        let tape = Tape::new();
        let x = tape.constant(mat(1, 3, vec![1f64.ln(), 2f64.ln(), 3f64.ln()]));
        let y = x.softmax_lastdim().unwrap().value();
        let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (got, want) in y.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_up_to_1e4() {
        let tape = Tape::new();
        let mut vals = Vec::new();
        let mut s = 0.317f64;
        for _ in 0..64 {
            s = (s * 997.0).fract();
            vals.push((s - 0.5) * 2e4);
        }
        let x = tape.constant(mat(8, 8, vals));
        let y = x.softmax_lastdim().unwrap().value();
        for row in y.data().chunks(8) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
        }
    }

    #[test]
    fn backward_through_add_mul() {
        // loss = mean((a*b + a)) over 2x2; d/da = (b+1)/4, d/db = a/4
        let tape = Tape::new();
        let a = tape.input(mat(2, 2, vec![1.0, 2.0, 3.0, 4.0]).requires_grad(true));
        let b = tape.input(mat(2, 2, vec![5.0, 6.0, 7.0, 8.0]).requires_grad(true));
        let loss = a.mul(b).unwrap().add(a).unwrap().mean_all().unwrap();
        let grads = tape.backward(loss).unwrap();
        let ga = grads.wrt(a).unwrap();
        let gb = grads.wrt(b).unwrap();
        for (g, bv) in ga.data().iter().zip([5.0, 6.0, 7.0, 8.0]) {
            assert!((g - (bv + 1.0) / 4.0).abs() < 1e-15);
        }
        for (g, av) in gb.data().iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((g - av / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let a = tape.input(mat(2, 2, vec![0.0; 4]).requires_grad(true));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let a = tape.input(mat(1, 2, vec![1.0, 2.0]).requires_grad(true));
        let c = tape.constant(mat(1, 2, vec![3.0, 4.0]));
        let loss = a.mul(c).unwrap().mean_all().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(c).is_none());
        assert!(grads.wrt(a).is_some());
    }

    #[test]
    fn gather_rows_accumulates_duplicates() {
        let tape = Tape::new();
        let a = tape.input(mat(2, 2, vec![1.0, 2.0, 3.0, 4.0]).requires_grad(true));
        let g = a.gather_rows(&[0, 0, 1]).unwrap();
        let loss = g.mean_all().unwrap();
        let grads = tape.backward(loss).unwrap();
        let ga = grads.wrt(a).unwrap();
        // each of 6 output elements contributes 1/6; row 0 gathered twice
        assert!((ga.data()[0] - 2.0 / 6.0).abs() < 1e-15);
        assert!((ga.data()[2] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_matches_hand_value() {
        let tape = Tape::new();
        let x = tape.constant(mat(1, 2, vec![0.0, 0.0]));
        let loss = x.cross_entropy(&[0]).unwrap();
        assert!((loss.value().item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn smape_loss_hand_value() {
        // truth 10, pred 30 -> 200 * 20/40 = 100
        let tape = Tape::new();
        let p = tape.constant(mat(1, 1, vec![30.0]));
        let loss = p.smape_loss(&mat(1, 1, vec![10.0])).unwrap();
        assert!((loss.value().item() - 100.0).abs() < 1e-12);
    }
}
