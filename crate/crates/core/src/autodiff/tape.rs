//! Record-on-forward reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Tape`]; inputs always precede the
//! node that consumes them, so [`Tape::backward`] is a single pass over the
//! nodes in reverse insertion order.

use super::Tensor;
use crate::error::{Error, Result};

/// Logit written into masked softmax positions.
pub const ZEROFILL: f64 = -1e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatLast(Vec<Var>),
    SliceLast {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    SquaredError(Var, Var),
    Softmax {
        x: Var,
        /// Full-shape keep flags; `None` means unmasked.
        keep: Option<Vec<bool>>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    PairSqDist {
        z: Var,
        targets: Tensor,
        pairs: Vec<(usize, usize)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph. One tape per forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// `c = a·b + beta·c` for `m×k` times `k×n` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the caller passes slices whose extents cover the strided
    // m×k, k×n and m×n (row-major) regions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; p * r];
        gemm(
            p,
            q,
            r,
            self.value(a).data(),
            q,
            1,
            self.value(b).data(),
            r,
            1,
            0.0,
            &mut out,
        );
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![p, r], out)?, Op::MatMul(a, b), rg))
    }

    /// `[B,p,q] × [B,q,r] → [B,p,r]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("batch_matmul", sa, sb));
        }
        let (bs, p, q, r) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * p * r];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for t in 0..bs {
                gemm(
                    p,
                    q,
                    r,
                    &ad[t * p * q..],
                    q,
                    1,
                    &bd[t * q * r..],
                    r,
                    1,
                    0.0,
                    &mut out[t * p * r..(t + 1) * p * r],
                );
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![bs, p, r], out)?,
            Op::BatchMatMul(a, b),
            rg,
        ))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v * s).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(t, Op::Scale(x, s), rg)
    }

    /// Adds a `[d]` bias to every row of `x[..., d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tx.last_dim();
        if tb.numel() != d {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(d) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    /// Swaps the last two axes (batched for rank 3).
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() < 2 {
            return Err(Error::shape("transpose", s, &[]));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = tx.numel() / (r * c);
        let mut data = vec![0.0; tx.numel()];
        let src = tx.data();
        for b in 0..batch {
            let off = b * r * c;
            for i in 0..r {
                for j in 0..c {
                    data[off + j * r + i] = src[off + i * c + j];
                }
            }
        }
        let mut shape = s.to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let t = Tensor::new(shape, data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", &lead, s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.needs(xs);
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatLast(xs.to_vec()), rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.last_dim();
        if len == 0 || start + len > d {
            return Err(Error::shape("slice_last", tx.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(tx.rows() * len);
        for row in tx.data().chunks(d) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceLast { x, start }, rg))
    }

    /// Splits the last axis into consecutive pieces of the given widths.
    pub fn split_last(&mut self, x: Var, widths: &[usize]) -> Result<Vec<Var>> {
        if widths.iter().sum::<usize>() != self.value(x).last_dim() {
            return Err(Error::shape("split_last", self.shape(x), widths));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(widths.len());
        for &w in widths {
            out.push(self.slice_last(x, start, w)?);
            start += w;
        }
        Ok(out)
    }

    /// Selects rows of the `[rows, last_dim]` view; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if indices.is_empty() || indices.iter().any(|&i| i >= tx.rows()) {
            return Err(Error::shape("gather_rows", tx.shape(), &[indices.len()]));
        }
        let t = tx.select_rows(indices);
        let rg = self.needs(&[x]);
        Ok(self.push(
            t,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s = tx.data().iter().sum::<f64>() / tx.numel() as f64;
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.zip(a, b, "squared_error", |x, y| (x - y) * (x - y))?;
        let s = d.data().iter().sum();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::SquaredError(a, b), rg))
    }

    fn expand_mask(&self, x: Var, mask: &[f64]) -> Result<Vec<bool>> {
        let tx = self.value(x);
        let d = tx.last_dim();
        if mask.len() != d && mask.len() != tx.numel() {
            return Err(Error::shape("softmax mask", tx.shape(), &[mask.len()]));
        }
        if let Some(bad) = mask.iter().find(|&&w| w != 0.0 && w != 1.0) {
            return Err(Error::InvalidMask(format!("mask entry {bad} is not 0 or 1")));
        }
        Ok((0..tx.numel()).map(|i| mask[i % mask.len()] == 1.0).collect())
    }

    /// Softmax over the last axis. Positions whose mask entry is 0 get the
    /// logit `-1e9` before normalisation. The mask is either one row
    /// (broadcast) or the full shape. Every row must keep at least one entry.
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&[f64]>) -> Result<Var> {
        let keep = match mask {
            None => None,
            Some(m) => {
                let keep = self.expand_mask(x, m)?;
                let d = self.value(x).last_dim();
                if let Some(r) = keep.chunks(d).position(|row| !row.iter().any(|&k| k)) {
                    return Err(Error::InvalidMask(format!(
                        "row {r} masks every position; at least one view must stay available"
                    )));
                }
                Some(keep)
            }
        };
        Ok(self.softmax_impl(x, keep))
    }

    /// Same as [`Tape::softmax_masked`] but a fully masked row is allowed and
    /// evaluates to the uniform distribution (every logit is `-1e9`). This is
    /// the literal zerofill rule used for the query rows of missing views.
    pub fn softmax_zerofill(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let keep = self.expand_mask(x, mask)?;
        Ok(self.softmax_impl(x, Some(keep)))
    }

    fn softmax_impl(&mut self, x: Var, keep: Option<Vec<bool>>) -> Var {
        let tx = self.value(x);
        let d = tx.last_dim();
        let mut out = tx.data().to_vec();
        if let Some(k) = &keep {
            for (o, &kk) in out.iter_mut().zip(k) {
                if !kk {
                    *o = ZEROFILL;
                }
            }
        }
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(t, Op::Softmax { x, keep }, rg)
    }

    /// Row-wise standardisation (population variance) followed by
    /// `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.last_dim();
        if d < 2 || self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::shape("layer_norm", tx.shape(), self.shape(gamma)));
        }
        if eps <= 0.0 {
            return Err(Error::Range(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = tx.rows();
        let mut normalized = Vec::with_capacity(tx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mu) * is;
                normalized.push(xh);
                out.push(g[j] * xh + b[j]);
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// `Σ_(r, c) ‖z[r] − targets[c]‖²` over the listed row pairs; `targets`
    /// is a constant.
    pub fn pair_sq_dist(&mut self, z: Var, targets: Tensor, pairs: Vec<(usize, usize)>) -> Result<Var> {
        let tz = self.value(z);
        if tz.last_dim() != targets.last_dim() {
            return Err(Error::shape("pair_sq_dist", tz.shape(), targets.shape()));
        }
        if pairs
            .iter()
            .any(|&(r, c)| r >= tz.rows() || c >= targets.rows())
        {
            return Err(Error::shape("pair_sq_dist", tz.shape(), targets.shape()));
        }
        let s = pairs
            .iter()
            .map(|&(r, c)| {
                tz.row(r)
                    .iter()
                    .zip(targets.row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        let rg = self.needs(&[z]);
        Ok(self.push(Tensor::scalar(s), Op::PairSqDist { z, targets, pairs }, rg))
    }

    /// Reverse pass from a scalar. Gradients of trainable leaves accumulate
    /// across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Rank(lt.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut g: Vec<Option<Vec<f64>>> = vec![None; n];
        g[loss.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(up) = g[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let acc = self.grads[id].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
                for (a, u) in acc.data_mut().iter_mut().zip(&up) {
                    *a += u;
                }
                continue;
            }
            self.propagate(id, &up, &mut g);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, up: &[f64], g: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let slot = g[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = (val(*a).shape()[0], val(*a).shape()[1]);
                let r = val(*b).shape()[1];
                acc(*a, &mut |ga| {
                    gemm(p, r, q, up, r, 1, val(*b).data(), 1, r, 1.0, ga);
                });
                acc(*b, &mut |gb| {
                    gemm(q, p, r, val(*a).data(), 1, q, up, r, 1, 1.0, gb);
                });
            }
            Op::BatchMatMul(a, b) => {
                let sa = val(*a).shape();
                let (bs, p, q) = (sa[0], sa[1], sa[2]);
                let r = val(*b).shape()[2];
                acc(*a, &mut |ga| {
                    for t in 0..bs {
                        gemm(
                            p,
                            r,
                            q,
                            &up[t * p * r..],
                            r,
                            1,
                            &val(*b).data()[t * q * r..],
                            1,
                            r,
                            1.0,
                            &mut ga[t * p * q..(t + 1) * p * q],
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for t in 0..bs {
                        gemm(
                            q,
                            p,
                            r,
                            &val(*a).data()[t * p * q..],
                            1,
                            q,
                            &up[t * p * r..],
                            r,
                            1,
                            1.0,
                            &mut gb[t * q * r..(t + 1) * q * r],
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, up));
                acc(*b, &mut |gb| add_into(gb, up));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, up));
                acc(*b, &mut |gb| {
                    for (o, u) in gb.iter_mut().zip(up) {
                        *o -= u;
                    }
                });
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |ga| {
                    for ((o, u), y) in ga.iter_mut().zip(up).zip(val(*b).data()) {
                        *o += u * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, u), x) in gb.iter_mut().zip(up).zip(val(*a).data()) {
                        *o += u * x;
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| {
                for (o, u) in gx.iter_mut().zip(up) {
                    *o += u * s;
                }
            }),
            Op::AddBias(x, bias) => {
                acc(*x, &mut |gx| add_into(gx, up));
                let d = val(*bias).numel();
                acc(*bias, &mut |gb| {
                    for row in up.chunks(d) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Relu(x) => acc(*x, &mut |gx| {
                for ((o, u), v) in gx.iter_mut().zip(up).zip(val(*x).data()) {
                    if *v > 0.0 {
                        *o += u;
                    }
                }
            }),
            Op::Transpose(x) => {
                let s = val(*x).shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                acc(*x, &mut |gx| {
                    for b in 0..gx.len() / (r * c) {
                        let off = b * r * c;
                        for i in 0..r {
                            for j in 0..c {
                                gx[off + i * c + j] += up[off + j * r + i];
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| add_into(gx, up)),
            Op::ConcatLast(xs) => {
                let total = nodes[id].value.last_dim();
                let mut start = 0;
                for &x in xs {
                    let w = val(x).last_dim();
                    acc(x, &mut |gx| {
                        for (dst, src) in gx.chunks_mut(w).zip(up.chunks(total)) {
                            add_into(dst, &src[start..start + w]);
                        }
                    });
                    start += w;
                }
            }
            Op::SliceLast { x, start } => {
                let d = val(*x).last_dim();
                let w = nodes[id].value.last_dim();
                acc(*x, &mut |gx| {
                    for (dst, src) in gx.chunks_mut(d).zip(up.chunks(w)) {
                        add_into(&mut dst[*start..*start + w], src);
                    }
                });
            }
            Op::GatherRows { x, indices } => {
                let d = val(*x).last_dim();
                acc(*x, &mut |gx| {
                    for (k, &i) in indices.iter().enumerate() {
                        add_into(&mut gx[i * d..(i + 1) * d], &up[k * d..(k + 1) * d]);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += up[0];
                }
            }),
            Op::Mean(x) => {
                let s = up[0] / val(*x).numel() as f64;
                acc(*x, &mut |gx| {
                    for o in gx.iter_mut() {
                        *o += s;
                    }
                });
            }
            Op::SquaredError(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(da).zip(db) {
                        *o += 2.0 * (x - y) * up[0];
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(da).zip(db) {
                        *o -= 2.0 * (x - y) * up[0];
                    }
                });
            }
            Op::Softmax { x, keep } => {
                let y = nodes[id].value.data();
                let d = nodes[id].value.last_dim();
                acc(*x, &mut |gx| {
                    for (r, (yr, ur)) in y.chunks(d).zip(up.chunks(d)).enumerate() {
                        let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            if keep.as_ref().map_or(true, |k| k[r * d + j]) {
                                gx[r * d + j] += yr[j] * (ur[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let d = val(*x).last_dim();
                let gm = val(*gamma).data();
                acc(*x, &mut |gx| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let xh = &normalized[r * d..(r + 1) * d];
                        let ur = &up[r * d..(r + 1) * d];
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for j in 0..d {
                            let dxh = ur[j] * gm[j];
                            mean_g += dxh;
                            mean_gx += dxh * xh[j];
                        }
                        mean_g /= d as f64;
                        mean_gx /= d as f64;
                        for j in 0..d {
                            let dxh = ur[j] * gm[j];
                            gx[r * d + j] += is * (dxh - mean_g - xh[j] * mean_gx);
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (ur, xh) in up.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            gg[j] += ur[j] * xh[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for ur in up.chunks(d) {
                        add_into(gb, ur);
                    }
                });
            }
            Op::PairSqDist { z, targets, pairs } => {
                let tz = val(*z);
                let d = tz.last_dim();
                acc(*z, &mut |gz| {
                    for &(r, c) in pairs {
                        let zr = tz.row(r);
                        let tc = targets.row(c);
                        for j in 0..d {
                            gz[r * d + j] += 2.0 * (zr[j] - tc[j]) * up[0];
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}
