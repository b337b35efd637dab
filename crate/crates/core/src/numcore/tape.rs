//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! Every op appends one node holding its output value and the references it
//! needs for the backward rule. Values are never mutated after recording, and
//! `backward` replays the record once, newest node first.

use std::sync::Arc;

use super::error::{shape_err, NumError};
use super::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn, transpose};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row layout for the fused attention op.
///
/// Rows of the packed `q`, `k`, `v` matrices are grouped into independent
/// segments (one per sequence). Attention never crosses a segment boundary,
/// and keys whose `key_valid` flag is false (padding) receive zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub heads: usize,
    pub segments: Vec<(usize, usize)>,
    pub key_valid: Option<Vec<bool>>,
}

impl AttentionLayout {
    pub fn single(len: usize, heads: usize) -> Self {
        Self {
            heads,
            segments: vec![(0, len)],
            key_valid: None,
        }
    }

    fn total_rows(&self) -> usize {
        self.segments.iter().map(|&(s, l)| s + l).max().unwrap_or(0)
    }

    fn valid(&self, row: usize) -> bool {
        self.key_valid.as_ref().map_or(true, |m| m[row])
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Scatter {
        src: Var,
        rows: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: Arc<AttentionLayout>,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    BceLogits {
        logits: Var,
        labels: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], retained for leaf nodes.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Operation record for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    spent: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

fn softmax_row_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumError> {
        match self.value(v).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let out = gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let mut out = va.clone();
        out.add_assign_tensor(vb);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector to every row of `x` along its trailing axis.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (_, d) = vx.last_dim();
        if vb.numel() != d || vb.shape().len() != 1 {
            return Err(shape_err(
                "add_row",
                format!("{:?} + row {:?}", vx.shape(), vb.shape()),
            ));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", format!("{:?} * {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let (r, c) = self.dims2(a, "transpose")?;
        let out = transpose(self.value(a).data(), r, c);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let out = self.value(a).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Half-open range `start..end` of a matrix along `axis` (0 = rows, 1 = columns).
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, NumError> {
        let (r, c) = self.dims2(a, "slice")?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || start >= end || end > extent {
            return Err(shape_err(
                "slice",
                format!("range {start}..{end} on axis {axis} of [{r}x{c}]"),
            ));
        }
        let src = self.value(a).data();
        let out = if axis == 0 {
            Tensor::from_parts(vec![end - start, c], src[start * c..end * c].to_vec())
        } else {
            let w = end - start;
            let mut data = Vec::with_capacity(r * w);
            for i in 0..r {
                data.extend_from_slice(&src[i * c + start..i * c + end]);
            }
            Tensor::from_parts(vec![r, w], data)
        };
        Ok(self.push(out, Op::Slice { x: a, axis, start }, &[a]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, NumError> {
        if xs.is_empty() || axis > 1 {
            return Err(shape_err("concat", "need at least one input and axis 0 or 1"));
        }
        let dims: Vec<(usize, usize)> = xs
            .iter()
            .map(|&v| self.dims2(v, "concat"))
            .collect::<Result<_, _>>()?;
        let out = if axis == 0 {
            let c = dims[0].1;
            if dims.iter().any(|d| d.1 != c) {
                return Err(shape_err("concat", format!("column extents differ: {dims:?}")));
            }
            let mut data = Vec::new();
            for &v in xs {
                data.extend_from_slice(self.value(v).data());
            }
            let r = dims.iter().map(|d| d.0).sum();
            Tensor::from_parts(vec![r, c], data)
        } else {
            let r = dims[0].0;
            if dims.iter().any(|d| d.0 != r) {
                return Err(shape_err("concat", format!("row extents differ: {dims:?}")));
            }
            let c: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for (&v, d) in xs.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(v).data()[i * d.1..(i + 1) * d.1]);
                }
            }
            Tensor::from_parts(vec![r, c], data)
        };
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_fwd);
        self.push(out, Op::Gelu(a), &[a])
    }

    /// Softmax along the trailing axis, with max subtraction per row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let va = self.value(a);
        if va.data().iter().any(|v| v.is_nan()) {
            return Err(NumError::NonFinite { op: "softmax_rows" });
        }
        let (_, d) = va.last_dim();
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(d) {
            softmax_row_in_place(row);
        }
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Normalizes each row along the trailing axis to zero mean and unit
    /// variance (epsilon 1e-5 inside the root), then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumError> {
        let vx = self.value(x);
        let (rows, d) = vx.last_dim();
        if d < 2 {
            return Err(shape_err("layer_norm", "normalized axis needs at least 2 entries"));
        }
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.numel() != d || vb.numel() != d {
            return Err(shape_err(
                "layer_norm",
                format!("gain {:?} / bias {:?} vs width {d}", vg.shape(), vb.shape()),
            ));
        }
        let inv_d = T::of(1.0 / d as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for row in vx.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * vg.data()[j] + vb.data()[j]);
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), out);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let (v, d) = self.dims2(table, "embedding")?;
        if ids.is_empty() {
            return Err(NumError::Contract("embedding lookup with no ids".into()));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumError::Index {
                    op: "embedding",
                    index: id,
                    extent: v,
                });
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Adjoint of [`Tape::embedding`]: an `n_rows × d` matrix of zeros with
    /// source row `i` added into row `rows[i]`.
    pub fn scatter_rows(&mut self, src: Var, rows: &[usize], n_rows: usize) -> Result<Var, NumError> {
        let (r, d) = self.dims2(src, "scatter_rows")?;
        if r != rows.len() {
            return Err(shape_err("scatter_rows", format!("{r} source rows, {} targets", rows.len())));
        }
        let mut out = Tensor::zeros(&[n_rows, d]);
        {
            let s = self.value(src).data();
            let o = out.data_mut();
            for (i, &row) in rows.iter().enumerate() {
                if row >= n_rows {
                    return Err(NumError::Index {
                        op: "scatter_rows",
                        index: row,
                        extent: n_rows,
                    });
                }
                for j in 0..d {
                    o[row * d + j] += s[i * d + j];
                }
            }
        }
        Ok(self.push(
            out,
            Op::Scatter {
                src,
                rows: rows.to_vec(),
            },
            &[src],
        ))
    }

    /// Multi-head scaled dot-product attention over packed segments.
    ///
    /// `q`, `k`, `v` are `[N × d]` with `d` divisible by `layout.heads`; the
    /// output is the per-head context concatenated back to `[N × d]`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: Arc<AttentionLayout>,
    ) -> Result<Var, NumError> {
        let (n, d) = self.dims2(q, "attention")?;
        if self.dims2(k, "attention")? != (n, d) || self.dims2(v, "attention")? != (n, d) {
            return Err(shape_err("attention", "q, k and v must share one shape"));
        }
        let h = layout.heads;
        if h == 0 || d % h != 0 {
            return Err(shape_err("attention", format!("width {d} not divisible by {h} heads")));
        }
        if layout.total_rows() > n || layout.key_valid.as_ref().is_some_and(|m| m.len() != n) {
            return Err(shape_err("attention", format!("layout does not fit {n} rows")));
        }
        let dh = d / h;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![T::zero(); n * d];
        let mut probs = Vec::new();
        for &(start, len) in &layout.segments {
            for head in 0..h {
                let qh = head_block(qd, start, len, d, head, dh);
                let kh = head_block(kd, start, len, d, head, dh);
                let vh = head_block(vd, start, len, d, head, dh);
                let mut p = gemm_nt(&qh, &kh, len, dh, len);
                for i in 0..len {
                    let row = &mut p[i * len..(i + 1) * len];
                    masked_softmax(row, scale, |j| layout.valid(start + j));
                }
                let ctx = gemm_nn(&p, &vh, len, len, dh);
                for i in 0..len {
                    let dst = (start + i) * d + head * dh;
                    out[dst..dst + dh].copy_from_slice(&ctx[i * dh..(i + 1) * dh]);
                }
                probs.extend_from_slice(&p);
            }
        }
        let out = Tensor::from_parts(vec![n, d], out);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Mean negative log-probability of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumError> {
        let (m, vocab) = self.dims2(logits, "cross_entropy")?;
        if targets.is_empty() {
            return Err(NumError::Contract("cross_entropy over an empty batch".into()));
        }
        if targets.len() != m {
            return Err(shape_err("cross_entropy", format!("{m} rows, {} targets", targets.len())));
        }
        let vl = self.value(logits);
        if vl.data().iter().any(|v| v.is_nan()) {
            return Err(NumError::NonFinite { op: "cross_entropy" });
        }
        let mut probs = vl.data().to_vec();
        let mut loss = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            if t >= vocab {
                return Err(NumError::Index {
                    op: "cross_entropy",
                    index: t,
                    extent: vocab,
                });
            }
            let row = &mut probs[i * vocab..(i + 1) * vocab];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[t];
            softmax_row_in_place(row);
        }
        let out = Tensor::scalar(loss / T::of(m as f64));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean squared error against a constant target with the same value count.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var, NumError> {
        let vp = self.value(pred);
        if target.is_empty() {
            return Err(NumError::Contract("mse over an empty batch".into()));
        }
        if vp.numel() != target.len() {
            return Err(shape_err("mse", format!("{} predictions, {} targets", vp.numel(), target.len())));
        }
        let m = T::of(target.len() as f64);
        let loss = vp
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>()
            / m;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    /// Mean binary cross-entropy of sigmoid(`logits`) against 0/1 `labels`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var, NumError> {
        let vz = self.value(logits);
        if labels.is_empty() {
            return Err(NumError::Contract("binary cross-entropy over an empty batch".into()));
        }
        if vz.numel() != labels.len() {
            return Err(shape_err("bce_with_logits", format!("{} logits, {} labels", vz.numel(), labels.len())));
        }
        let mut loss = T::zero();
        for (&z, &y) in vz.data().iter().zip(labels) {
            // softplus(z) - y z, written to stay finite for large |z|
            let sp = z.max(T::zero()) + (T::one() + (-z.abs()).exp()).ln();
            loss += sp - y * z;
        }
        let out = Tensor::scalar(loss / T::of(labels.len() as f64));
        Ok(self.push(
            out,
            Op::BceLogits {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Propagates gradients from the scalar `loss` to every reachable node
    /// that requires them. A tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, NumError> {
        if self.spent {
            return Err(NumError::Contract(
                "backward already ran on this tape; record a fresh forward pass".into(),
            ));
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumError::Contract(format!(
                "loss must be a scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let seed = Tensor::full(lv.shape(), T::one());
        self.spent = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign_tensor(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let ga = gemm_nt(gd, vb.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = gemm_tn(va.data(), gd, m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.nodes[bias.0].requires_grad {
                    let d = self.value(*bias).numel();
                    let mut gb = vec![T::zero(); d];
                    for row in gd.chunks(d) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_parts(vec![d], gb));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga: Vec<T> = gd.iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                let gb: Vec<T> = gd.iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                self.accumulate(grads, *a, Tensor::from_parts(va.shape().to_vec(), ga));
                self.accumulate(grads, *b, Tensor::from_parts(vb.shape().to_vec(), gb));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::Transpose(a) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let gt = transpose(gd, r, c);
                self.accumulate(grads, *a, Tensor::from_parts(vec![c, r], gt));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::from_parts(shape, gd.to_vec()));
            }
            Op::Slice { x, axis, start } => {
                let vx = self.value(*x);
                let (r, c) = (vx.shape()[0], vx.shape()[1]);
                let mut gx = Tensor::zeros(&[r, c]);
                let out = gx.data_mut();
                if *axis == 0 {
                    out[start * c..start * c + gd.len()].copy_from_slice(gd);
                } else {
                    let w = g.shape()[1];
                    for i in 0..r {
                        out[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { xs, axis } => {
                let total_c = g.shape()[1];
                let mut offset = 0;
                for &v in xs {
                    let (r, c) = (self.value(v).shape()[0], self.value(v).shape()[1]);
                    let part = if *axis == 0 {
                        let p = gd[offset * c..(offset + r) * c].to_vec();
                        offset += r;
                        p
                    } else {
                        let mut p = Vec::with_capacity(r * c);
                        for i in 0..r {
                            p.extend_from_slice(&gd[i * total_c + offset..i * total_c + offset + c]);
                        }
                        offset += c;
                        p
                    };
                    self.accumulate(grads, v, Tensor::from_parts(vec![r, c], part));
                }
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                let gx: Vec<T> = gd.iter().zip(va.data()).map(|(&gv, &x)| gv * gelu_grad(x)).collect();
                self.accumulate(grads, *a, Tensor::from_parts(va.shape().to_vec(), gx));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let (_, d) = y.last_dim();
                let mut gx = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(d).zip(y.data().chunks(d)) {
                    let s = dot(grow, yrow);
                    gx.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| yv * (gv - s)));
                }
                self.accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), gx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let vg = self.value(*gain).data();
                let d = vg.len();
                let inv_d = T::of(1.0 / d as f64);
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                let mut gx = Vec::with_capacity(gd.len());
                let mut gh = vec![T::zero(); d];
                for ((grow, hrow), &r) in gd.chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                    let mut mean_gh = T::zero();
                    let mut mean_ghh = T::zero();
                    for j in 0..d {
                        ggain[j] += grow[j] * hrow[j];
                        gbias[j] += grow[j];
                        gh[j] = grow[j] * vg[j];
                        mean_gh += gh[j];
                        mean_ghh += gh[j] * hrow[j];
                    }
                    mean_gh *= inv_d;
                    mean_ghh *= inv_d;
                    for j in 0..d {
                        gx.push(r * (gh[j] - mean_gh - hrow[j] * mean_ghh));
                    }
                }
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::from_parts(shape, gx));
                self.accumulate(grads, *gain, Tensor::from_parts(vec![d], ggain));
                self.accumulate(grads, *bias, Tensor::from_parts(vec![d], gbias));
            }
            Op::Gather { table, ids } => {
                if self.nodes[table.0].requires_grad {
                    let shape = self.value(*table).shape().to_vec();
                    let d = shape[1];
                    let mut gt = Tensor::zeros(&shape);
                    let out = gt.data_mut();
                    for (i, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &gd[i * d..(i + 1) * d], &mut out[id * d..(id + 1) * d]);
                    }
                    self.accumulate(grads, *table, gt);
                }
            }
            Op::Scatter { src, rows } => {
                let d = g.shape()[1];
                let mut gs = Vec::with_capacity(rows.len() * d);
                for &row in rows {
                    gs.extend_from_slice(&gd[row * d..(row + 1) * d]);
                }
                self.accumulate(grads, *src, Tensor::from_parts(vec![rows.len(), d], gs));
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => {
                let (n, d) = (g.shape()[0], g.shape()[1]);
                let h = layout.heads;
                let dh = d / h;
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut gq = vec![T::zero(); n * d];
                let mut gk = vec![T::zero(); n * d];
                let mut gv = vec![T::zero(); n * d];
                let mut offset = 0;
                for &(start, len) in &layout.segments {
                    for head in 0..h {
                        let p = &probs[offset..offset + len * len];
                        offset += len * len;
                        let go = head_block(gd, start, len, d, head, dh);
                        let qh = head_block(qd, start, len, d, head, dh);
                        let kh = head_block(kd, start, len, d, head, dh);
                        let vh = head_block(vd, start, len, d, head, dh);
                        let gvh = gemm_tn(p, &go, len, len, dh);
                        let mut gp = gemm_nt(&go, &vh, len, dh, len);
                        for i in 0..len {
                            let prow = &p[i * len..(i + 1) * len];
                            let grow = &mut gp[i * len..(i + 1) * len];
                            let s = dot(grow, prow);
                            for (gv_, &pv) in grow.iter_mut().zip(prow) {
                                *gv_ = pv * (*gv_ - s) * scale;
                            }
                        }
                        let gqh = gemm_nn(&gp, &kh, len, len, dh);
                        let gkh = gemm_tn(&gp, &qh, len, len, dh);
                        scatter_head(&mut gq, &gqh, start, len, d, head, dh);
                        scatter_head(&mut gk, &gkh, start, len, d, head, dh);
                        scatter_head(&mut gv, &gvh, start, len, d, head, dh);
                    }
                }
                self.accumulate(grads, *q, Tensor::from_parts(vec![n, d], gq));
                self.accumulate(grads, *k, Tensor::from_parts(vec![n, d], gk));
                self.accumulate(grads, *v, Tensor::from_parts(vec![n, d], gv));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let m = targets.len();
                let vocab = probs.len() / m;
                let scale = gd[0] / T::of(m as f64);
                let mut gl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * vocab + t] -= T::one();
                }
                for v in gl.iter_mut() {
                    *v *= scale;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(vec![m, vocab], gl));
            }
            Op::Mse { pred, target } => {
                let vp = self.value(*pred);
                let scale = gd[0] * T::of(2.0 / target.len() as f64);
                let gp: Vec<T> = vp.data().iter().zip(target).map(|(&p, &t)| (p - t) * scale).collect();
                self.accumulate(grads, *pred, Tensor::from_parts(vp.shape().to_vec(), gp));
            }
            Op::BceLogits { logits, labels } => {
                let vz = self.value(*logits);
                let scale = gd[0] / T::of(labels.len() as f64);
                let gz: Vec<T> = vz
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| (sigmoid(z) - y) * scale)
                    .collect();
                self.accumulate(grads, *logits, Tensor::from_parts(vz.shape().to_vec(), gz));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, gd[0]));
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn masked_softmax<T: Scalar>(row: &mut [T], scale: T, valid: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, v) in row.iter_mut().enumerate() {
        if valid(j) {
            *v *= scale;
            max = max.max(*v);
        }
    }
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut total = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        *v = if valid(j) { (*v - max).exp() } else { T::zero() };
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn head_block<T: Scalar>(src: &[T], start: usize, len: usize, d: usize, head: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * dh);
    for i in 0..len {
        let base = (start + i) * d + head * dh;
        out.extend_from_slice(&src[base..base + dh]);
    }
    out
}

fn scatter_head<T: Scalar>(dst: &mut [T], block: &[T], start: usize, len: usize, d: usize, head: usize, dh: usize) {
    for i in 0..len {
        let base = (start + i) * d + head * dh;
        for (o, &b) in dst[base..base + dh].iter_mut().zip(&block[i * dh..(i + 1) * dh]) {
            *o += b;
        }
    }
}
