//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node, so node order is a
//! topological order. `backward` walks it once in reverse.

use std::collections::HashMap;

use super::kernels;
use super::params::{ParamId, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f32>,
        rstd: Vec<f64>,
    },
    Gelu(NodeId),
    Reshape(NodeId),
    Permute {
        x: NodeId,
        axes: Vec<usize>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Vec<f32>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], keyed by leaf node and, for
/// bound parameters, by [`ParamId`]. Leaves that do not require gradients
/// have no entry.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<NodeId, Tensor>,
    params: HashMap<ParamId, NodeId>,
}

impl Gradients {
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.leaves.get(&node)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|n| self.leaves.get(n))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(id, n)| self.leaves.get(n).map(|g| (*id, g)))
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, NodeId>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|n| self.nodes[n.0].requires_grad)
    }

    /// A leaf that participates in differentiation when `requires_grad`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        self.push(value, Op::Leaf, requires_grad, "input")
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.input(value, false)
    }

    /// Binds a parameter as a leaf. Binding the same parameter twice returns
    /// the same node so that gradients from all uses accumulate in one place.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Result<NodeId> {
        if let Some(&n) = self.bound.get(&id) {
            return Ok(n);
        }
        let n = self.input(set.value(id).clone(), set.is_trainable(id))?;
        self.bound.insert(id, n);
        Ok(n)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out_shape, data) = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(out_shape, data)?, Op::Add(a, b), rg, "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (out_shape, data) = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(out_shape, data)?, Op::Mul(a, b), rg, "mul")
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: NodeId, s: f32) -> Result<NodeId> {
        let c = self.constant(Tensor::scalar(s))?;
        self.mul(a, c)
    }

    fn broadcast_binary(
        &self,
        a: NodeId,
        b: NodeId,
        op: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<(Vec<usize>, Vec<f32>)> {
        let (va, vb) = (self.value(a), self.value(b));
        let (big, small, swapped) = if broadcasts_to(va.shape(), vb.shape()) {
            (va, vb, false)
        } else if broadcasts_to(vb.shape(), va.shape()) {
            (vb, va, true)
        } else {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        };
        let n = small.numel();
        let data = big
            .data()
            .chunks_exact(n)
            .flat_map(|chunk| {
                chunk.iter().zip(small.data()).map(|(&x, &y)| {
                    if swapped {
                        f(y, x)
                    } else {
                        f(x, y)
                    }
                })
            })
            .collect();
        Ok((big.shape().to_vec(), data))
    }

    /// Matrix product. `a` is `[.., m, k]`; `b` is either `[k, n]` (shared
    /// across all leading axes of `a`) or `[batch, k, n]` with `a` of shape
    /// `[batch, m, k]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let k = *sa.last().unwrap();
        let data = match sb.len() {
            2 => {
                if sb[0] != k {
                    return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
                }
                let m = self.value(a).numel() / k;
                let n = sb[1];
                let mut out = vec![0f32; m * n];
                kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
                let mut shape = sa.clone();
                *shape.last_mut().unwrap() = n;
                (shape, out)
            }
            3 => {
                if sa.len() != 3 || sa[0] != sb[0] || sb[1] != k {
                    return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
                }
                let (batch, m, n) = (sa[0], sa[1], sb[2]);
                let mut out = vec![0f32; batch * m * n];
                let (da, db) = (self.value(a).data(), self.value(b).data());
                for i in 0..batch {
                    kernels::matmul(
                        &da[i * m * k..(i + 1) * m * k],
                        &db[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                        &mut out[i * m * n..(i + 1) * m * n],
                    );
                }
                (vec![batch, m, n], out)
            }
            _ => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(data.0, data.1)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// Row lookup: `table` is `[rows, width]`; output is `[ids.len(), width]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::shape("gather", format!("table {:?}", t.shape())));
        }
        let (rows, width) = (t.shape()[0], t.shape()[1]);
        if ids.is_empty() {
            return Err(Error::shape("gather", "no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * width);
        for &i in ids {
            if i >= rows {
                return Err(Error::OutOfRange(format!("gather id {i} >= {rows}")));
            }
            data.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
        }
        let rg = self.rg(&[table]);
        let value = Tensor::new(vec![ids.len(), width], data)?;
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
            "gather",
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let width = *v.shape().last().unwrap();
        let out = kernels::softmax_rows(v.data(), width);
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax(x), rg, "softmax")
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let width = *v.shape().last().unwrap();
        if self.value(gamma).numel() != width || self.value(beta).numel() != width {
            return Err(Error::shape("layer_norm", "affine width mismatch"));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = v.numel() / width;
        let mut xhat = vec![0f32; v.numel()];
        let mut out = vec![0f32; v.numel()];
        let mut rstd = vec![0f64; rows];
        for r in 0..rows {
            let row = &v.data()[r * width..(r + 1) * width];
            let mean = row.iter().map(|&x| x as f64).sum::<f64>() / width as f64;
            let var = row
                .iter()
                .map(|&x| (x as f64 - mean).powi(2))
                .sum::<f64>()
                / width as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..width {
                let h = (row[j] as f64 - mean) * rs;
                xhat[r * width + j] = h as f32;
                out[r * width + j] = (h * g[j] as f64 + b[j] as f64) as f32;
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
            "layer_norm",
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let out = v.data().iter().map(|&x| kernels::gelu(x)).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu(x), rg, "gelu")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Reshape(x), rg, "reshape")
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..v.rank()).collect::<Vec<_>>() {
            return Err(Error::shape(
                "permute",
                format!("axes {axes:?} for rank {}", v.rank()),
            ));
        }
        let (data, shape) = kernels::permute(v.data(), v.shape(), axes);
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(
            value,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
            "permute",
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(Error::shape("transpose", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        let shape = v.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Slice { x, axis, start }, rg, "slice")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let s: f64 = v.data().iter().map(|&v| v as f64).sum();
        let m = s / v.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(m as f32), Op::Mean(x), rg, "mean")
    }

    /// Mean negative log-likelihood over rows with a target. `logits` is
    /// `[.., classes]`; rows with `None` contribute neither loss nor gradient.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let v = self.value(logits);
        let width = *v.shape().last().unwrap();
        let rows = v.numel() / width;
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::invalid("cross_entropy needs at least one target"));
        }
        let probs = kernels::softmax_rows(v.data(), width);
        let mut total = 0f64;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= width {
                    return Err(Error::OutOfRange(format!("target {t} >= {width}")));
                }
                let lsm = kernels::log_softmax_row(&v.data()[r * width..(r + 1) * width]);
                total -= lsm[t];
            }
        }
        let loss = (total / count as f64) as f32;
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Reverse pass from a scalar node. Gradients accumulate additively over
    /// every path; only leaves that require gradients receive storage.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid(
                "backward called on a node that was never evaluated",
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, g, NodeId(i), &mut grads, &mut out)?;
        }
        for (&pid, &nid) in &self.bound {
            if out.leaves.contains_key(&nid) {
                out.params.insert(pid, nid);
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], to: NodeId, g: Vec<f32>) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        value: &Tensor,
        g: Vec<f32>,
        id: NodeId,
        grads: &mut [Option<Vec<f32>>],
        out: &mut Gradients,
    ) -> Result<()> {
        match op {
            Op::Leaf => {
                out.leaves
                    .insert(id, Tensor::new(value.shape().to_vec(), g)?);
            }
            Op::Add(a, b) => {
                for x in [*a, *b] {
                    let n = self.value(x).numel();
                    self.accumulate(grads, x, reduce_broadcast(&g, n));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                for (x, other) in [(*a, vb), (*b, va)] {
                    if !self.requires_grad(x) {
                        continue;
                    }
                    let on = other.numel();
                    let prod: Vec<f32> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * other.data()[i % on])
                        .collect();
                    let n = self.value(x).numel();
                    self.accumulate(grads, x, reduce_broadcast(&prod, n));
                }
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, &g, grads),
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let width = t.shape()[1];
                let mut acc = vec![0f32; t.numel()];
                for (r, &i) in ids.iter().enumerate() {
                    for j in 0..width {
                        acc[i * width + j] += g[r * width + j];
                    }
                }
                self.accumulate(grads, *table, acc);
            }
            Op::Softmax(x) => {
                let width = *value.shape().last().unwrap();
                let y = value.data();
                let mut dx = vec![0f32; y.len()];
                for r in 0..y.len() / width {
                    let (ys, gs) = (&y[r * width..(r + 1) * width], &g[r * width..(r + 1) * width]);
                    let dot: f64 = ys.iter().zip(gs).map(|(&a, &b)| a as f64 * b as f64).sum();
                    for j in 0..width {
                        dx[r * width + j] = (ys[j] as f64 * (gs[j] as f64 - dot)) as f32;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let width = *value.shape().last().unwrap();
                let rows = value.numel() / width;
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![0f64; width];
                let mut dbeta = vec![0f64; width];
                let mut dx = vec![0f32; value.numel()];
                for r in 0..rows {
                    let off = r * width;
                    let mut sum_dh = 0f64;
                    let mut sum_dh_h = 0f64;
                    for j in 0..width {
                        let gy = g[off + j] as f64;
                        let h = xhat[off + j] as f64;
                        dgamma[j] += gy * h;
                        dbeta[j] += gy;
                        let dh = gy * gm[j] as f64;
                        sum_dh += dh;
                        sum_dh_h += dh * h;
                    }
                    let n = width as f64;
                    for j in 0..width {
                        let h = xhat[off + j] as f64;
                        let dh = g[off + j] as f64 * gm[j] as f64;
                        dx[off + j] = (rstd[r] * (dh - sum_dh / n - h * sum_dh_h / n)) as f32;
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma.iter().map(|&v| v as f32).collect());
                self.accumulate(grads, *beta, dbeta.iter().map(|&v| v as f32).collect());
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let dx = xv
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gy)| (kernels::gelu_grad(x) * gy as f64) as f32)
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g),
            Op::Permute { x, axes } => {
                let (dx, _) = kernels::permute(&g, value.shape(), &kernels::inverse_axes(axes));
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts, axis } => {
                let shape = value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut bufs: Vec<Vec<f32>> = parts
                    .iter()
                    .map(|p| Vec::with_capacity(self.value(*p).numel()))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (k, &p) in parts.iter().enumerate() {
                        let len = self.shape(p)[*axis] * inner;
                        bufs[k].extend_from_slice(&g[pos..pos + len]);
                        pos += len;
                    }
                }
                for (p, buf) in parts.iter().zip(bufs) {
                    self.accumulate(grads, *p, buf);
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x);
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let full = in_shape[*axis] * inner;
                let len = value.shape()[*axis] * inner;
                let mut dx = vec![0f32; self.value(*x).numel()];
                for o in 0..outer {
                    let base = o * full + start * inner;
                    dx[base..base + len].copy_from_slice(&g[o * len..(o + 1) * len]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![(g[0] as f64 / n as f64) as f32; n]);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let width = probs.len() / targets.len();
                let scale = g[0] as f64 / *count as f64;
                let mut dx = vec![0f32; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        for j in 0..width {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dx[r * width + j] = ((probs[r * width + j] as f64 - onehot) * scale) as f32;
                        }
                    }
                }
                self.accumulate(grads, *logits, dx);
            }
        }
        Ok(())
    }

    fn matmul_backward(&self, a: NodeId, b: NodeId, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let (va, vb) = (self.value(a), self.value(b));
        let sa = va.shape();
        let sb = vb.shape();
        let k = *sa.last().unwrap();
        let (batch, m, n) = if sb.len() == 2 {
            (1, va.numel() / k, sb[1])
        } else {
            (sa[0], sa[1], sb[2])
        };
        let shared_b = sb.len() == 2;
        if self.requires_grad(a) {
            // dA = dC · Bᵀ
            let mut da = vec![0f32; va.numel()];
            for i in 0..batch {
                let bb = if shared_b { vb.data() } else { &vb.data()[i * k * n..(i + 1) * k * n] };
                let bt = kernels::transpose(bb, k, n);
                kernels::matmul(
                    &g[i * m * n..(i + 1) * m * n],
                    &bt,
                    m,
                    n,
                    k,
                    &mut da[i * m * k..(i + 1) * m * k],
                );
            }
            self.accumulate(grads, a, da);
        }
        if self.requires_grad(b) {
            // dB = Aᵀ · dC
            let mut db = vec![0f32; vb.numel()];
            for i in 0..batch {
                let at = kernels::transpose(&va.data()[i * m * k..(i + 1) * m * k], m, k);
                let dst = if shared_b { &mut db[..] } else { &mut db[i * k * n..(i + 1) * k * n] };
                kernels::matmul(&at, &g[i * m * n..(i + 1) * m * n], k, m, n, dst);
            }
            self.accumulate(grads, b, db);
        }
    }
}

/// True when `small`, with leading singleton axes stripped, is a suffix of
/// `big`.
fn broadcasts_to(big: &[usize], small: &[usize]) -> bool {
    let first = small.iter().position(|&d| d != 1).unwrap_or(small.len());
    let core = &small[first..];
    core.len() <= big.len() && big[big.len() - core.len()..] == *core
}

fn reduce_broadcast(g: &[f32], n: usize) -> Vec<f32> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut acc = vec![0f64; n];
    for chunk in g.chunks_exact(n) {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}
