//! Dense 2-D tensors over `f64` with tape-based reverse-mode differentiation.
//!
//! Every forward op is recorded on a [`Tape`]; [`Tape::backward`] replays the
//! record in reverse and accumulates adjoints into per-node gradient buffers.
//! Shapes are always `[rows, cols]`: vectors are `1×n` rows, scalars `1×1`.
//! A tape is owned by one training step at a time; running `backward` twice
//! without building a fresh tape is a contract error.

use std::cell::{Cell, RefCell};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("slice {start}..{end} out of bounds for axis length {len}")]
    SliceOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("layer_norm needs last-axis length >= 2, got {0}")]
    LayerNormTooNarrow(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; build a fresh tape per step")]
    BackwardTwice,
    #[error("concat needs at least one input")]
    EmptyConcat,
}

/// Plain dense value: row-major `f64` data with a `[rows, cols]` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(vec![rows, cols], vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1, 1], vec![v])
    }

    /// 1×n row vector.
    pub fn row(values: &[f64]) -> Self {
        Tensor::new(vec![1, values.len()], values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }
}

/// Handle into a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// m×n plus a broadcast 1×n row.
    AddRow(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    Relu(TensorId),
    Exp(TensorId),
    ClampMin(TensorId, f64),
    Softmax(TensorId, usize),
    LayerNorm {
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    },
    /// Mean over the given axis (0 collapses rows, 1 collapses cols).
    MeanPool(TensorId, usize),
    Sum(TensorId),
    Concat(Vec<TensorId>, usize),
    SliceRows(TensorId, usize, usize),
    SliceCols(TensorId, usize, usize),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Records forward operations and replays them in reverse for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Vec<f64>>>,
    ran_backward: Cell<bool>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> TensorId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        TensorId(nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes.borrow()[id.0].requires_grad
    }

    fn any_requires(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.requires(i))
    }

    /// Constant input; no gradient tracked.
    pub fn leaf(&self, value: Tensor) -> TensorId {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable input; gradient accumulated by `backward`.
    pub fn param(&self, value: Tensor) -> TensorId {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, id: TensorId) -> Tensor {
        self.nodes.borrow()[id.0].value.clone()
    }

    pub fn shape(&self, id: TensorId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.shape.clone()
    }

    /// Gradient of the last `backward` loss w.r.t. this node, if tracked.
    pub fn grad(&self, id: TensorId) -> Option<Vec<f64>> {
        if !self.ran_backward.get() || !self.requires(id) {
            return None;
        }
        Some(self.grads.borrow()[id.0].clone())
    }

    pub fn matmul(&self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                lhs: va.shape,
                rhs: vb.shape,
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let ail = va.data[i * k + l];
                if ail == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += ail * vb.data[l * n + j];
                }
            }
        }
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out), rg))
    }

    pub fn transpose(&self, a: TensorId) -> TensorId {
        let v = self.value(a);
        let (m, n) = (v.rows(), v.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v.data[i * n + j];
            }
        }
        let rg = self.requires(a);
        self.push(Op::Transpose(a), Tensor::new(vec![n, m], out), rg)
    }

    fn zip_same_shape(
        &self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool), TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(TensorError::DimMismatch {
                op: op_name,
                lhs: va.shape,
                rhs: vb.shape,
            });
        }
        let data = va
            .data
            .iter()
            .zip(vb.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((Tensor::new(va.shape, data), self.any_requires(&[a, b])))
    }

    pub fn add(&self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (v, rg) = self.zip_same_shape("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (v, rg) = self.zip_same_shape("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (v, rg) = self.zip_same_shape("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    /// `a` (m×n) plus row vector `b` (1×n) broadcast over rows.
    pub fn add_row(&self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(TensorError::DimMismatch {
                op: "add_row",
                lhs: va.shape,
                rhs: vb.shape,
            });
        }
        let n = va.cols();
        let data = va
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + vb.data[i % n])
            .collect();
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(Op::AddRow(a, b), Tensor::new(va.shape, data), rg))
    }

    pub fn scale(&self, a: TensorId, c: f64) -> TensorId {
        let v = self.value(a);
        let data = v.data.iter().map(|&x| x * c).collect();
        let rg = self.requires(a);
        self.push(Op::Scale(a, c), Tensor::new(v.shape, data), rg)
    }

    pub fn add_const(&self, a: TensorId, c: f64) -> TensorId {
        let v = self.value(a);
        let data = v.data.iter().map(|&x| x + c).collect();
        let rg = self.requires(a);
        self.push(Op::AddConst(a), Tensor::new(v.shape, data), rg)
    }

    pub fn relu(&self, a: TensorId) -> TensorId {
        let v = self.value(a);
        let data = v.data.iter().map(|&x| x.max(0.0)).collect();
        let rg = self.requires(a);
        self.push(Op::Relu(a), Tensor::new(v.shape, data), rg)
    }

    pub fn exp(&self, a: TensorId) -> TensorId {
        let v = self.value(a);
        let data = v.data.iter().map(|&x| x.exp()).collect();
        let rg = self.requires(a);
        self.push(Op::Exp(a), Tensor::new(v.shape, data), rg)
    }

    /// Elementwise `max(x, c)`; subgradient 0 where clamped.
    pub fn clamp_min(&self, a: TensorId, c: f64) -> TensorId {
        let v = self.value(a);
        let data = v.data.iter().map(|&x| x.max(c)).collect();
        let rg = self.requires(a);
        self.push(Op::ClampMin(a, c), Tensor::new(v.shape, data), rg)
    }

    /// Numerically stable softmax along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax(&self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        let v = self.value(a);
        if axis > 1 {
            return Err(TensorError::InvalidAxis {
                axis,
                shape: v.shape,
            });
        }
        let out = softmax_value(&v, axis);
        let rg = self.requires(a);
        Ok(self.push(Op::Softmax(a, axis), out, rg))
    }

    /// Normalize each row to zero mean / unit variance, then apply the
    /// per-feature affine `gain ⊙ x̂ + bias` (both 1×n rows).
    pub fn layer_norm(
        &self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let n = vx.cols();
        if n < 2 {
            return Err(TensorError::LayerNormTooNarrow(n));
        }
        for other in [&vg, &vb] {
            if other.rows() != 1 || other.cols() != n {
                return Err(TensorError::DimMismatch {
                    op: "layer_norm",
                    lhs: vx.shape.clone(),
                    rhs: other.shape.clone(),
                });
            }
        }
        let m = vx.rows();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &vx.data[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                data[i * n + j] = vg.data[j] * (row[j] - mean) * inv + vb.data[j];
            }
        }
        let rg = self.any_requires(&[x, gain, bias]);
        Ok(self.push(
            Op::LayerNorm { x, gain, bias, eps },
            Tensor::new(vec![m, n], data),
            rg,
        ))
    }

    /// Arithmetic mean over `axis`: axis 0 gives a 1×n row, axis 1 an m×1 column.
    pub fn mean_pool(&self, a: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        let v = self.value(a);
        if axis > 1 {
            return Err(TensorError::InvalidAxis {
                axis,
                shape: v.shape,
            });
        }
        let (m, n) = (v.rows(), v.cols());
        let out = if axis == 0 {
            let mut data = vec![0.0; n];
            for row in v.data.chunks(n) {
                for (d, &x) in data.iter_mut().zip(row.iter()) {
                    *d += x;
                }
            }
            for d in data.iter_mut() {
                *d /= m as f64;
            }
            Tensor::new(vec![1, n], data)
        } else {
            let data: Vec<f64> = v
                .data
                .chunks(n)
                .map(|row| row.iter().sum::<f64>() / n as f64)
                .collect();
            Tensor::new(vec![m, 1], data)
        };
        let rg = self.requires(a);
        Ok(self.push(Op::MeanPool(a, axis), out, rg))
    }

    /// Sum of all elements, as a 1×1 scalar.
    pub fn sum(&self, a: TensorId) -> TensorId {
        let v = self.value(a);
        let s = v.data.iter().sum();
        let rg = self.requires(a);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    /// Mean of all elements, as a 1×1 scalar.
    pub fn mean(&self, a: TensorId) -> TensorId {
        let n = self.value(a).data.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn concat(&self, parts: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyConcat);
        }
        let values: Vec<Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let first = &values[0];
        if axis > 1 {
            return Err(TensorError::InvalidAxis {
                axis,
                shape: first.shape.clone(),
            });
        }
        let fixed = 1 - axis;
        for v in &values[1..] {
            if v.shape[fixed] != first.shape[fixed] {
                return Err(TensorError::DimMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: v.shape.clone(),
                });
            }
        }
        let out = if axis == 0 {
            let n = first.cols();
            let m: usize = values.iter().map(|v| v.rows()).sum();
            let mut data = Vec::with_capacity(m * n);
            for v in &values {
                data.extend_from_slice(&v.data);
            }
            Tensor::new(vec![m, n], data)
        } else {
            let m = first.rows();
            let n: usize = values.iter().map(|v| v.cols()).sum();
            let mut data = vec![0.0; m * n];
            let mut off = 0;
            for v in &values {
                let vc = v.cols();
                for i in 0..m {
                    data[i * n + off..i * n + off + vc].copy_from_slice(&v.data[i * vc..(i + 1) * vc]);
                }
                off += vc;
            }
            Tensor::new(vec![m, n], data)
        };
        let rg = self.any_requires(parts);
        Ok(self.push(Op::Concat(parts.to_vec(), axis), out, rg))
    }

    pub fn slice_rows(
        &self,
        a: TensorId,
        start: usize,
        end: usize,
    ) -> Result<TensorId, TensorError> {
        let v = self.value(a);
        if start >= end || end > v.rows() {
            return Err(TensorError::SliceOutOfBounds {
                start,
                end,
                len: v.rows(),
            });
        }
        let n = v.cols();
        let data = v.data[start * n..end * n].to_vec();
        let rg = self.requires(a);
        Ok(self.push(
            Op::SliceRows(a, start, end),
            Tensor::new(vec![end - start, n], data),
            rg,
        ))
    }

    pub fn slice_cols(
        &self,
        a: TensorId,
        start: usize,
        end: usize,
    ) -> Result<TensorId, TensorError> {
        let v = self.value(a);
        if start >= end || end > v.cols() {
            return Err(TensorError::SliceOutOfBounds {
                start,
                end,
                len: v.cols(),
            });
        }
        let (m, n) = (v.rows(), v.cols());
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&v.data[i * n + start..i * n + end]);
        }
        let rg = self.requires(a);
        Ok(self.push(
            Op::SliceCols(a, start, end),
            Tensor::new(vec![m, w], data),
            rg,
        ))
    }

    /// Reverse sweep: seeds `d loss / d loss = 1` and accumulates adjoints
    /// into every gradient-tracked node reachable from `loss`.
    pub fn backward(&self, loss: TensorId) -> Result<(), TensorError> {
        if self.ran_backward.get() {
            return Err(TensorError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(loss_node.value.shape.clone()));
        }
        let mut grads: Vec<Vec<f64>> = nodes
            .iter()
            .map(|n| vec![0.0; n.value.data.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad || grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let dy = grads[i].clone();
            match nodes[i].op.clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    if nodes[a.0].requires_grad {
                        let da = &mut grads[a.0];
                        for r in 0..m {
                            for c in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += dy[r * n + j] * vb.data[c * n + j];
                                }
                                da[r * k + c] += s;
                            }
                        }
                    }
                    if nodes[b.0].requires_grad {
                        let db = &mut grads[b.0];
                        for c in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for r in 0..m {
                                    s += va.data[r * k + c] * dy[r * n + j];
                                }
                                db[c * n + j] += s;
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (n, m) = (nodes[i].value.rows(), nodes[i].value.cols());
                    let da = &mut grads[a.0];
                    for r in 0..n {
                        for c in 0..m {
                            da[c * n + r] += dy[r * m + c];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for id in [a, b] {
                        if nodes[id.0].requires_grad {
                            for (g, &d) in grads[id.0].iter_mut().zip(dy.iter()) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[a.0].requires_grad {
                        for (g, &d) in grads[a.0].iter_mut().zip(dy.iter()) {
                            *g += d;
                        }
                    }
                    if nodes[b.0].requires_grad {
                        for (g, &d) in grads[b.0].iter_mut().zip(dy.iter()) {
                            *g -= d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].requires_grad {
                        let vb = nodes[b.0].value.data.clone();
                        for ((g, &d), &y) in grads[a.0].iter_mut().zip(dy.iter()).zip(vb.iter()) {
                            *g += d * y;
                        }
                    }
                    if nodes[b.0].requires_grad {
                        let va = nodes[a.0].value.data.clone();
                        for ((g, &d), &x) in grads[b.0].iter_mut().zip(dy.iter()).zip(va.iter()) {
                            *g += d * x;
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    let n = nodes[b.0].value.cols();
                    if nodes[a.0].requires_grad {
                        for (g, &d) in grads[a.0].iter_mut().zip(dy.iter()) {
                            *g += d;
                        }
                    }
                    if nodes[b.0].requires_grad {
                        for (j, &d) in dy.iter().enumerate() {
                            grads[b.0][j % n] += d;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    for (g, &d) in grads[a.0].iter_mut().zip(dy.iter()) {
                        *g += d * c;
                    }
                }
                Op::AddConst(a) => {
                    for (g, &d) in grads[a.0].iter_mut().zip(dy.iter()) {
                        *g += d;
                    }
                }
                Op::Relu(a) => {
                    let vx = nodes[a.0].value.data.clone();
                    for ((g, &d), &x) in grads[a.0].iter_mut().zip(dy.iter()).zip(vx.iter()) {
                        if x > 0.0 {
                            *g += d;
                        }
                    }
                }
                Op::Exp(a) => {
                    let vy = nodes[i].value.data.clone();
                    for ((g, &d), &y) in grads[a.0].iter_mut().zip(dy.iter()).zip(vy.iter()) {
                        *g += d * y;
                    }
                }
                Op::ClampMin(a, c) => {
                    let vx = nodes[a.0].value.data.clone();
                    for ((g, &d), &x) in grads[a.0].iter_mut().zip(dy.iter()).zip(vx.iter()) {
                        if x > c {
                            *g += d;
                        }
                    }
                }
                Op::Softmax(a, axis) => {
                    let y = &nodes[i].value;
                    let (m, n) = (y.rows(), y.cols());
                    let da = &mut grads[a.0];
                    let (slices, len, stride, step) = if axis == 1 {
                        (m, n, n, 1)
                    } else {
                        (n, m, 1, n)
                    };
                    for s in 0..slices {
                        let base = s * stride;
                        let mut dot = 0.0;
                        for t in 0..len {
                            let idx = base + t * step;
                            dot += dy[idx] * y.data[idx];
                        }
                        for t in 0..len {
                            let idx = base + t * step;
                            da[idx] += y.data[idx] * (dy[idx] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let vx = &nodes[x.0].value;
                    let vg = &nodes[gain.0].value;
                    let (m, n) = (vx.rows(), vx.cols());
                    let nf = n as f64;
                    for r in 0..m {
                        let row = &vx.data[r * n..(r + 1) * n];
                        let mean = row.iter().sum::<f64>() / nf;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> = (0..n)
                            .map(|j| dy[r * n + j] * vg.data[j])
                            .collect();
                        if nodes[gain.0].requires_grad {
                            for j in 0..n {
                                grads[gain.0][j] += dy[r * n + j] * xhat[j];
                            }
                        }
                        if nodes[bias.0].requires_grad {
                            for j in 0..n {
                                grads[bias.0][j] += dy[r * n + j];
                            }
                        }
                        if nodes[x.0].requires_grad {
                            let mean_dxhat = dxhat.iter().sum::<f64>() / nf;
                            let mean_dxhat_xhat = dxhat
                                .iter()
                                .zip(xhat.iter())
                                .map(|(&a, &b)| a * b)
                                .sum::<f64>()
                                / nf;
                            for j in 0..n {
                                grads[x.0][r * n + j] +=
                                    inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            }
                        }
                    }
                }
                Op::MeanPool(a, axis) => {
                    let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                    let da = &mut grads[a.0];
                    if axis == 0 {
                        for r in 0..m {
                            for j in 0..n {
                                da[r * n + j] += dy[j] / m as f64;
                            }
                        }
                    } else {
                        for r in 0..m {
                            for j in 0..n {
                                da[r * n + j] += dy[r] / n as f64;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    let d = dy[0];
                    for g in grads[a.0].iter_mut() {
                        *g += d;
                    }
                }
                Op::Concat(parts, axis) => {
                    if axis == 0 {
                        let n = nodes[i].value.cols();
                        let mut row_off = 0;
                        for p in parts {
                            let pr = nodes[p.0].value.rows();
                            if nodes[p.0].requires_grad {
                                for (g, &d) in grads[p.0]
                                    .iter_mut()
                                    .zip(dy[row_off * n..(row_off + pr) * n].iter())
                                {
                                    *g += d;
                                }
                            }
                            row_off += pr;
                        }
                    } else {
                        let (m, n) = (nodes[i].value.rows(), nodes[i].value.cols());
                        let mut col_off = 0;
                        for p in parts {
                            let pc = nodes[p.0].value.cols();
                            if nodes[p.0].requires_grad {
                                for r in 0..m {
                                    for j in 0..pc {
                                        grads[p.0][r * pc + j] += dy[r * n + col_off + j];
                                    }
                                }
                            }
                            col_off += pc;
                        }
                    }
                }
                Op::SliceRows(a, start, _end) => {
                    let n = nodes[a.0].value.cols();
                    for (k, &d) in dy.iter().enumerate() {
                        grads[a.0][start * n + k] += d;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let n = nodes[a.0].value.cols();
                    let w = end - start;
                    let m = nodes[i].value.rows();
                    for r in 0..m {
                        for j in 0..w {
                            grads[a.0][r * n + start + j] += dy[r * w + j];
                        }
                    }
                }
            }
        }
        drop(nodes);
        *self.grads.borrow_mut() = grads;
        self.ran_backward.set(true);
        Ok(())
    }
}

fn softmax_value(v: &Tensor, axis: usize) -> Tensor {
    let (m, n) = (v.rows(), v.cols());
    let mut data = vec![0.0; m * n];
    let (slices, len, stride, step) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
    for s in 0..slices {
        let base = s * stride;
        let mut mx = f64::NEG_INFINITY;
        for t in 0..len {
            mx = mx.max(v.data[base + t * step]);
        }
        let mut total = 0.0;
        for t in 0..len {
            let e = (v.data[base + t * step] - mx).exp();
            data[base + t * step] = e;
            total += e;
        }
        for t in 0..len {
            data[base + t * step] /= total;
        }
    }
    Tensor::new(v.shape.clone(), data)
}
