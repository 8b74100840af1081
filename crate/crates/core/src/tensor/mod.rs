//! Dense double-precision tensors with reverse-mode gradients.
//!
//! Nodes are immutable once built. [`Tensor::backward`] walks the graph in a
//! fixed topological order and returns a [`Gradients`] map, so a graph built
//! on one thread is differentiated deterministically and per-sample graphs
//! can be evaluated on different workers.

mod adam;

pub use adam::Adam;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply–accumulate operations performed by forward matrix products on
/// the current thread since the last [`reset_mac_count`].
pub fn mac_count() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

fn add_macs(n: usize) {
    MACS.with(|c| c.set(c.get() + n as u64));
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    Scale(Tensor, f64),
    Transpose(Tensor),
    Reshape(Tensor),
    SliceCols {
        x: Tensor,
        start: usize,
    },
    ConcatCols(Vec<Tensor>),
    GatherRows {
        x: Tensor,
        rows: Vec<usize>,
    },
    Softmax {
        x: Tensor,
        axis: usize,
    },
    LayerNorm {
        x: Tensor,
        gain: Tensor,
        bias: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    BceWithLogits {
        logits: Tensor,
        targets: Vec<f64>,
        weights: Vec<f64>,
        norm: f64,
    },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![a, b]
            }
            Op::Scale(x, _)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::SliceCols { x, .. }
            | Op::GatherRows { x, .. }
            | Op::Softmax { x, .. }
            | Op::Gelu(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::BceWithLogits { logits: x, .. } => vec![x],
            Op::ConcatCols(xs) => xs.iter().collect(),
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish_non_exhaustive()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = op.parents().iter().any(|p| p.0.requires_grad);
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            op,
        }))
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            op: Op::Leaf,
        })))
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![0.0; numel(shape)], false).expect("consistent shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    fn id(&self) -> usize {
        self.0.id
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape() {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::arg(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::arg(format!(
                "{what}: shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::arg(format!(
                "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
            )));
        }
        add_macs(m * k * n);
        let data = matmul_kernel(self.data(), rhs.data(), m, k, n);
        Ok(Self::build(vec![m, n], data, Op::MatMul(self.clone(), rhs.clone())))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "add")?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a + b).collect();
        Ok(Self::build(self.shape().to_vec(), data, Op::Add(self.clone(), rhs.clone())))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "sub")?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a - b).collect();
        Ok(Self::build(self.shape().to_vec(), data, Op::Sub(self.clone(), rhs.clone())))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "mul")?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a * b).collect();
        Ok(Self::build(self.shape().to_vec(), data, Op::Mul(self.clone(), rhs.clone())))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (_, n) = self.dims2("add_row")?;
        if row.shape() != [n] {
            return Err(Error::arg(format!(
                "add_row: bias {:?} for {} columns",
                row.shape(),
                n
            )));
        }
        let data = self
            .data()
            .chunks_exact(n)
            .flat_map(|r| r.iter().zip(row.data()).map(|(a, b)| a + b))
            .collect();
        Ok(Self::build(self.shape().to_vec(), data, Op::AddRow(self.clone(), row.clone())))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Self::build(self.shape().to_vec(), data, Op::Scale(self.clone(), c))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let data = transpose_kernel(self.data(), m, n);
        Ok(Self::build(vec![n, m], data, Op::Transpose(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::arg(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Ok(Self::build(shape.to_vec(), self.data().to_vec(), Op::Reshape(self.clone())))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.dims2("slice_cols")?;
        if start + len > n || len == 0 {
            return Err(Error::arg(format!(
                "column slice {start}..{} of {n} columns",
                start + len
            )));
        }
        let data = self
            .data()
            .chunks_exact(n)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        Ok(Self::build(vec![m, len], data, Op::SliceCols {
            x: self.clone(),
            start,
        }))
    }

    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat_cols of nothing"))?;
        let (m, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_cols")?;
            if pm != m {
                return Err(Error::arg(format!("concat_cols: {pm} rows vs {m}")));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Ok(Self::build(vec![m, total], data, Op::ConcatCols(parts.to_vec())))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (m, n) = self.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::arg(format!("row {r} out of {m}")));
            }
            data.extend_from_slice(&self.data()[r * n..(r + 1) * n]);
        }
        Ok(Self::build(vec![rows.len(), n], data, Op::GatherRows {
            x: self.clone(),
            rows: rows.to_vec(),
        }))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::arg(format!("softmax axis {axis} for rank {}", shape.len())));
        }
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(Error::data("softmax input contains NaN"));
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let mut out = vec![0.0; self.len()];
        let x = self.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(Self::build(shape.to_vec(), out, Op::Softmax {
            x: self.clone(),
            axis,
        }))
    }

    /// Layer normalisation over the last axis with affine `gain`/`bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| Error::arg("layer_norm of a scalar"))?;
        if n < 2 {
            return Err(Error::arg("layer_norm needs at least two features"));
        }
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::arg(format!(
                "layer_norm affine shapes {:?}/{:?} for width {n}",
                gain.shape(),
                bias.shape()
            )));
        }
        let rows = self.len() / n;
        let mut xhat = Vec::with_capacity(self.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(self.len());
        for r in self.data().chunks_exact(n) {
            let mean = r.iter().sum::<f64>() / n as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in r.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * gain.data()[j] + bias.data()[j]);
            }
        }
        Ok(Self::build(self.shape().to_vec(), out, Op::LayerNorm {
            x: self.clone(),
            gain: gain.clone(),
            bias: bias.clone(),
            xhat,
            inv_std,
        }))
    }

    /// Exact GELU, `x · Φ(x)`.
    pub fn gelu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x * std_normal_cdf(x)).collect();
        Self::build(self.shape().to_vec(), data, Op::Gelu(self.clone()))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Self::build(vec![], vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let s = self.data().iter().sum::<f64>() / self.len().max(1) as f64;
        Self::build(vec![], vec![s], Op::Mean(self.clone()))
    }

    /// Weighted mean binary cross-entropy between `sigmoid(self)` and
    /// `targets`; samples with zero weight are ignored.
    pub fn bce_with_logits(&self, targets: &[f64], weights: &[f64]) -> Result<Tensor> {
        if targets.len() != self.len() || weights.len() != self.len() {
            return Err(Error::arg(format!(
                "bce: {} logits, {} targets, {} weights",
                self.len(),
                targets.len(),
                weights.len()
            )));
        }
        let norm: f64 = weights.iter().sum();
        if norm <= 0.0 {
            return Err(Error::arg("bce: total weight must be positive"));
        }
        let loss = self
            .data()
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&z, &t), &w)| w * (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()))
            .sum::<f64>()
            / norm;
        Ok(Self::build(vec![], vec![loss], Op::BceWithLogits {
            logits: self.clone(),
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            norm,
        }))
    }

    /// Reverse-mode pass from a scalar.
    pub fn backward(&self) -> Result<Gradients> {
        if self.len() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let order = self.topological_order();
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { grads });
        }
        grads.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.get(&node.id()).cloned() else {
                continue;
            };
            node.propagate(&g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// Post-order over the nodes that require gradients.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.op.parents().into_iter().rev() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn propagate(&self, g: &[f64], grads: &mut HashMap<usize, Vec<f64>>) {
        match &self.0.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                if a.requires_grad() {
                    // dA = G · Bᵀ
                    let bt = transpose_kernel(b.data(), k, n);
                    accumulate(grads, a, matmul_kernel(g, &bt, m, n, k));
                }
                if b.requires_grad() {
                    // dB = Aᵀ · G
                    let at = transpose_kernel(a.data(), m, k);
                    accumulate(grads, b, matmul_kernel(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, a, g.to_vec());
                accumulate(grads, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, a, g.to_vec());
                accumulate(grads, b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                accumulate(grads, a, g.iter().zip(b.data()).map(|(g, y)| g * y).collect());
                accumulate(grads, b, g.iter().zip(a.data()).map(|(g, x)| g * x).collect());
            }
            Op::AddRow(a, row) => {
                accumulate(grads, a, g.to_vec());
                if row.requires_grad() {
                    let n = row.len();
                    let mut d = vec![0.0; n];
                    for r in g.chunks_exact(n) {
                        for (acc, v) in d.iter_mut().zip(r) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, row, d);
                }
            }
            Op::Scale(x, c) => accumulate(grads, x, g.iter().map(|v| v * c).collect()),
            Op::Transpose(x) => {
                let (m, n) = (x.shape()[0], x.shape()[1]);
                accumulate(grads, x, transpose_kernel(g, n, m));
            }
            Op::Reshape(x) => accumulate(grads, x, g.to_vec()),
            Op::SliceCols { x, start } => {
                let n = x.shape()[1];
                let w = self.shape()[1];
                let mut d = vec![0.0; x.len()];
                for (i, r) in g.chunks_exact(w).enumerate() {
                    d[i * n + start..i * n + start + w].copy_from_slice(r);
                }
                accumulate(grads, x, d);
            }
            Op::ConcatCols(parts) => {
                let total = self.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = p.shape()[1];
                    if p.requires_grad() {
                        let d = g
                            .chunks_exact(total)
                            .flat_map(|r| r[offset..offset + w].iter().copied())
                            .collect();
                        accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::GatherRows { x, rows } => {
                let n = x.shape()[1];
                let mut d = vec![0.0; x.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        d[r * n + j] += g[i * n + j];
                    }
                }
                accumulate(grads, x, d);
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(x.shape(), *axis);
                let y = self.data();
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            d[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                accumulate(grads, x, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = gain.len();
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let mut dx = vec![0.0; x.len()];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for j in 0..n {
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                        let dh = gr[j] * gain.data()[j];
                        sum_d += dh;
                        sum_dh += dh * hr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gain.data()[j];
                        dx[r * n + j] = inv / n as f64 * (n as f64 * dh - sum_d - hr[j] * sum_dh);
                    }
                }
                accumulate(grads, x, dx);
                accumulate(grads, gain, dgain);
                accumulate(grads, bias, dbias);
            }
            Op::Gelu(x) => {
                let d = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, g)| g * (std_normal_cdf(v) + v * std_normal_pdf(v)))
                    .collect();
                accumulate(grads, x, d);
            }
            Op::Sum(x) => accumulate(grads, x, vec![g[0]; x.len()]),
            Op::Mean(x) => accumulate(grads, x, vec![g[0] / x.len() as f64; x.len()]),
            Op::BceWithLogits {
                logits,
                targets,
                weights,
                norm,
            } => {
                let d = logits
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(weights)
                    .map(|((&z, &t), &w)| g[0] * w * (sigmoid(z) - t) / norm)
                    .collect();
                accumulate(grads, logits, d);
            }
        }
    }
}

fn accumulate(grads: &mut HashMap<usize, Vec<f64>>, t: &Tensor, d: Vec<f64>) {
    if !t.requires_grad() {
        return;
    }
    match grads.get_mut(&t.id()) {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&d) {
                *a += v;
            }
        }
        None => {
            grads.insert(t.id(), d);
        }
    }
}

/// Gradients produced by [`Tensor::backward`], keyed by tensor identity.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`, if `t` lies on a path from
    /// the loss and requires gradients.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(Vec::as_slice)
    }

    /// Like [`Gradients::get`] but yields zeros for unreachable tensors.
    pub fn get_or_zero(&self, t: &Tensor) -> Vec<f64> {
        self.get(t).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_kernel(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}
