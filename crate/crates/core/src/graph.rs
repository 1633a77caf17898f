//! Reverse-mode differentiation over dense f64 tensors.
//!
//! A [`Graph`] records primitive operations as they are evaluated: every
//! builder method (`linear`, `relu`, `softmax_axis`, ...) infers and checks
//! the output shape, computes the value eagerly, and appends a node. Shape
//! mismatches therefore fail at construction time with the offending node id.
//! [`Graph::backward`] replays the recorded nodes in reverse to accumulate
//! gradients; [`Graph::recompute`] re-evaluates the whole recording after a
//! leaf value has been rebound, which is what the finite-difference checker
//! uses to probe `f(theta +/- eps)` without rebuilding the graph.
//!
//! All reductions run in a fixed element order, so identical bits in give
//! identical bits out.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphError {
    /// Id the offending node would have received.
    pub node: usize,
    pub message: String,
}

impl core::fmt::Display for GraphError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "graph node {}: {}", self.node, self.message)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GraphError {}

#[derive(Clone, Debug)]
enum LeafKind {
    Input(String),
    Param(String),
    Constant,
}

/// Where a batch-norm node takes its statistics from.
#[derive(Clone, Debug)]
enum BnStats {
    /// Training mode: statistics of the current batch, saved at eval time.
    Batch { mean: Vec<f64>, var: Vec<f64> },
    /// Inference mode: externally supplied running statistics.
    Given { mean: NodeId, var: NodeId },
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(LeafKind),
    /// `x [r,i] @ w[o,i]^T + b[o] -> [r,o]`
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    /// Softmax along `axis`, computed with max subtraction.
    SoftmaxAxis { x: NodeId, axis: usize },
    /// Normalizes over the row axis of `x [r,c]`.
    BatchNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f64,
        stats: BnStats,
    },
    /// Max along `axis`; ties route the gradient to the lowest index.
    MaxReduce {
        x: NodeId,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumReduce { x: NodeId, axis: usize },
    MeanReduce { x: NodeId, axis: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale { x: NodeId, k: f64 },
    /// Row gather on a 2-D tensor; duplicate indices are allowed.
    GatherRows { x: NodeId, idx: Vec<usize> },
    /// `out[r] = x[r, col[r]]` for a 2-D tensor.
    RowSelect { x: NodeId, cols: Vec<usize> },
    Concat { xs: Vec<NodeId>, axis: usize },
    Reshape { x: NodeId },
    /// `ln(max(x, floor))`; the number of clamped elements is recorded.
    LnClamped {
        x: NodeId,
        floor: f64,
        clamped: usize,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// A recorded computation, its values, and (after `backward`) its gradients.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

// ---- small dense kernels ------------------------------------------------

/// `y += a * x`
#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Forward microkernel with a compile-time output width: the accumulator
/// array lives in registers, which is what makes the narrow layers of this
/// model fast. Summation runs over the input axis in ascending order.
fn linear_rows<const O: usize>(xv: &[f64], i: usize, wt: &[f64], bv: &[f64], out: &mut [f64]) {
    let mut acc = [0.0f64; O];
    for (xrow, orow) in xv.chunks_exact(i).zip(out.chunks_exact_mut(O)) {
        acc.copy_from_slice(bv);
        for (ii, &xi) in xrow.iter().enumerate() {
            let wrow = &wt[ii * O..(ii + 1) * O];
            for (a, &w) in acc.iter_mut().zip(wrow) {
                *a += xi * w;
            }
        }
        orow.copy_from_slice(&acc);
    }
}

fn linear_rows_generic(xv: &[f64], i: usize, o: usize, wt: &[f64], bv: &[f64], out: &mut [f64]) {
    for (xrow, orow) in xv.chunks_exact(i).zip(out.chunks_exact_mut(o)) {
        orow.copy_from_slice(bv);
        for (ii, &xi) in xrow.iter().enumerate() {
            axpy(orow, xi, &wt[ii * o..(ii + 1) * o]);
        }
    }
}

macro_rules! dispatch_width {
    ($w:expr, $kernel:ident, $generic:expr, ($($args:expr),*)) => {
        match $w {
            1 => $kernel::<1>($($args),*),
            2 => $kernel::<2>($($args),*),
            3 => $kernel::<3>($($args),*),
            4 => $kernel::<4>($($args),*),
            6 => $kernel::<6>($($args),*),
            8 => $kernel::<8>($($args),*),
            12 => $kernel::<12>($($args),*),
            16 => $kernel::<16>($($args),*),
            24 => $kernel::<24>($($args),*),
            32 => $kernel::<32>($($args),*),
            48 => $kernel::<48>($($args),*),
            64 => $kernel::<64>($($args),*),
            96 => $kernel::<96>($($args),*),
            128 => $kernel::<128>($($args),*),
            256 => $kernel::<256>($($args),*),
            512 => $kernel::<512>($($args),*),
            _ => $generic,
        }
    };
}

/// `out[r,o] = x[r,i] @ w[o,i]^T + b[o]`.
fn linear_eval(xv: &[f64], r: usize, i: usize, wv: &[f64], o: usize, bv: &[f64], out: &mut [f64]) {
    debug_assert_eq!(xv.len(), r * i);
    debug_assert_eq!(out.len(), r * o);
    let mut wt = vec![0.0; i * o];
    for oo in 0..o {
        for ii in 0..i {
            wt[ii * o + oo] = wv[oo * i + ii];
        }
    }
    dispatch_width!(
        o,
        linear_rows,
        linear_rows_generic(xv, i, o, &wt, bv, out),
        (xv, i, &wt, bv, out)
    );
}

/// `dx[r,i] += gout[r,o] @ w[o,i]`, input width fixed at compile time.
fn linear_dx_rows<const I: usize>(gout: &[f64], o: usize, wv: &[f64], dx: &mut [f64]) {
    let mut acc = [0.0f64; I];
    for (grow, dxrow) in gout.chunks_exact(o).zip(dx.chunks_exact_mut(I)) {
        acc.copy_from_slice(dxrow);
        for (oo, &g) in grow.iter().enumerate() {
            let wrow = &wv[oo * I..(oo + 1) * I];
            for (a, &w) in acc.iter_mut().zip(wrow) {
                *a += g * w;
            }
        }
        dxrow.copy_from_slice(&acc);
    }
}

fn linear_dx_generic(gout: &[f64], o: usize, i: usize, wv: &[f64], dx: &mut [f64]) {
    for (grow, dxrow) in gout.chunks_exact(o).zip(dx.chunks_exact_mut(i)) {
        for (oo, &g) in grow.iter().enumerate() {
            axpy(dxrow, g, &wv[oo * i..(oo + 1) * i]);
        }
    }
}

fn linear_dx(gout: &[f64], o: usize, i: usize, wv: &[f64], dx: &mut [f64]) {
    dispatch_width!(
        i,
        linear_dx_rows,
        linear_dx_generic(gout, o, i, wv, dx),
        (gout, o, wv, dx)
    );
}

/// `dw[o,i] += gout[r,o]^T @ x[r,i]`, input width fixed at compile time.
fn linear_dw_rows<const I: usize>(gout: &[f64], o: usize, xv: &[f64], dw: &mut [f64]) {
    let mut xreg = [0.0f64; I];
    for (grow, xrow) in gout.chunks_exact(o).zip(xv.chunks_exact(I)) {
        xreg.copy_from_slice(xrow);
        for (oo, &g) in grow.iter().enumerate() {
            let drow = &mut dw[oo * I..(oo + 1) * I];
            for (d, &x) in drow.iter_mut().zip(&xreg) {
                *d += g * x;
            }
        }
    }
}

fn linear_dw_generic(gout: &[f64], o: usize, i: usize, xv: &[f64], dw: &mut [f64]) {
    for (grow, xrow) in gout.chunks_exact(o).zip(xv.chunks_exact(i)) {
        for (oo, &g) in grow.iter().enumerate() {
            axpy(&mut dw[oo * i..(oo + 1) * i], g, xrow);
        }
    }
}

fn linear_dw(gout: &[f64], o: usize, i: usize, xv: &[f64], dw: &mut [f64]) {
    dispatch_width!(
        i,
        linear_dw_rows,
        linear_dw_generic(gout, o, i, xv, dw),
        (gout, o, xv, dw)
    );
}

/// Decompose `shape` around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape.to_vec();
    out.remove(axis);
    if out.is_empty() {
        out.push(1);
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value computed for `node`.
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    /// Registered parameter leaves, in registration order.
    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    fn err(&self, message: String) -> GraphError {
        GraphError {
            node: self.nodes.len(),
            message,
        }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.grads.push(None);
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- leaves ----------------------------------------------------------

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf(LeafKind::Constant), value, false)
    }

    pub fn input(&mut self, name: &str, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(
            Op::Leaf(LeafKind::Input(String::from(name))),
            value,
            requires_grad,
        )
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push(Op::Leaf(LeafKind::Param(String::from(name))), value, true);
        self.params.push((String::from(name), id));
        id
    }

    /// Find an input or parameter leaf by name.
    pub fn find_leaf(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| match &n.op {
            Op::Leaf(LeafKind::Input(s)) | Op::Leaf(LeafKind::Param(s)) => s == name,
            _ => false,
        })
        .map(NodeId)
    }

    /// Rebind the value of a leaf node (same shape); used by replay.
    pub fn set_leaf_value(&mut self, node: NodeId, data: &[f64]) {
        let n = &mut self.nodes[node.0];
        assert!(matches!(n.op, Op::Leaf(_)), "set_leaf_value on non-leaf");
        assert_eq!(n.value.len(), data.len(), "leaf value length mismatch");
        n.value.data_mut().copy_from_slice(data);
    }

    // ---- builders ----------------------------------------------------------

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (xs, ws, bs) = (
            self.nodes[x.0].value.shape().to_vec(),
            self.nodes[w.0].value.shape().to_vec(),
            self.nodes[b.0].value.shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(self.err(format!(
                "linear wants x[r,i] w[o,i] b[o], got {xs:?} {ws:?} {bs:?}"
            )));
        }
        if xs[1] != ws[1] || bs[0] != ws[0] {
            return Err(self.err(format!(
                "linear dimension mismatch: x{xs:?} w{ws:?} b{bs:?}"
            )));
        }
        let (r, i, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0; r * o];
        linear_eval(
            self.nodes[x.0].value.data(),
            r,
            i,
            self.nodes[w.0].value.data(),
            o,
            self.nodes[b.0].value.data(),
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Op::Linear { x, w, b },
            Tensor::from_vec(&[r, o], out).expect("linear output shape"),
            needs,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        let v = &self.nodes[x.0].value;
        let out: Vec<f64> = v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        let shape = v.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Op::Relu(x),
            Tensor::from_vec(&shape, out).expect("relu shape"),
            needs,
        ))
    }

    pub fn softmax_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if axis >= shape.len() {
            return Err(self.err(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![0.0; xv.len()];
        let mut maxes = vec![0.0f64; inner];
        let mut sums = vec![0.0f64; inner];
        for o in 0..outer {
            let base = o * len * inner;
            maxes.copy_from_slice(&xv[base..base + inner]);
            for j in 1..len {
                let row = &xv[base + j * inner..base + (j + 1) * inner];
                for (m, &v) in maxes.iter_mut().zip(row) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
            sums.iter_mut().for_each(|s| *s = 0.0);
            for j in 0..len {
                let src = &xv[base + j * inner..base + (j + 1) * inner];
                let dst = &mut out[base + j * inner..base + (j + 1) * inner];
                for ((d, &v), (&m, s)) in
                    dst.iter_mut().zip(src).zip(maxes.iter().zip(sums.iter_mut()))
                {
                    let e = math::exp(v - m);
                    *d = e;
                    *s += e;
                }
            }
            for j in 0..len {
                let dst = &mut out[base + j * inner..base + (j + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(sums.iter()) {
                    *d /= s;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::SoftmaxAxis { x, axis },
            Tensor::from_vec(&shape, out).expect("softmax shape"),
            needs,
        ))
    }

    /// Batch normalization over the row axis of `x [r,c]`, using statistics
    /// of the current batch (training mode). Variance is the biased estimate.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f64,
    ) -> Result<NodeId, GraphError> {
        self.batch_norm_impl(x, scale, shift, eps, None)
    }

    /// Batch normalization with externally supplied (running) statistics.
    pub fn batch_norm_with_stats(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f64,
        mean: NodeId,
        var: NodeId,
    ) -> Result<NodeId, GraphError> {
        self.batch_norm_impl(x, scale, shift, eps, Some((mean, var)))
    }

    fn batch_norm_impl(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f64,
        given: Option<(NodeId, NodeId)>,
    ) -> Result<NodeId, GraphError> {
        let xs = self.nodes[x.0].value.shape().to_vec();
        if xs.len() != 2 {
            return Err(self.err(format!("batch_norm wants x[r,c], got {xs:?}")));
        }
        let (r, c) = (xs[0], xs[1]);
        for (what, id) in [("scale", scale), ("shift", shift)] {
            let s = self.nodes[id.0].value.shape();
            if s != [c] {
                return Err(self.err(format!("batch_norm {what} must be [{c}], got {s:?}")));
            }
        }
        if r == 0 {
            return Err(self.err(String::from("batch_norm on empty batch")));
        }
        let (mean, var, stats) = match given {
            Some((m, v)) => {
                for (what, id) in [("mean", m), ("var", v)] {
                    let s = self.nodes[id.0].value.shape();
                    if s != [c] {
                        return Err(self.err(format!("batch_norm {what} must be [{c}], got {s:?}")));
                    }
                }
                (
                    self.nodes[m.0].value.data().to_vec(),
                    self.nodes[v.0].value.data().to_vec(),
                    BnStats::Given { mean: m, var: v },
                )
            }
            None => {
                let xv = self.nodes[x.0].value.data();
                let mut mean = vec![0.0; c];
                for row in 0..r {
                    for (m, &v) in mean.iter_mut().zip(&xv[row * c..(row + 1) * c]) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= r as f64);
                let mut var = vec![0.0; c];
                for row in 0..r {
                    for ((vv, &v), &m) in
                        var.iter_mut().zip(&xv[row * c..(row + 1) * c]).zip(&mean)
                    {
                        let d = v - m;
                        *vv += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= r as f64);
                (
                    mean.clone(),
                    var.clone(),
                    BnStats::Batch { mean, var },
                )
            }
        };
        let xv = self.nodes[x.0].value.data();
        let sv = self.nodes[scale.0].value.data();
        let bv = self.nodes[shift.0].value.data();
        let mut out = vec![0.0; r * c];
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();
        for row in 0..r {
            let src = &xv[row * c..(row + 1) * c];
            let dst = &mut out[row * c..(row + 1) * c];
            for j in 0..c {
                dst[j] = sv[j] * (src[j] - mean[j]) * inv_std[j] + bv[j];
            }
        }
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        Ok(self.push(
            Op::BatchNorm {
                x,
                scale,
                shift,
                eps,
                stats,
            },
            Tensor::from_vec(&[r, c], out).expect("batch_norm shape"),
            needs,
        ))
    }

    /// Batch statistics saved by a training-mode batch-norm node, for
    /// updating running statistics outside the graph.
    pub fn bn_batch_stats(&self, node: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[node.0].op {
            Op::BatchNorm {
                stats: BnStats::Batch { mean, var },
                ..
            } => Some((mean, var)),
            _ => None,
        }
    }

    pub fn max_reduce(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if axis >= shape.len() {
            return Err(self.err(format!("max axis {axis} out of range for {shape:?}")));
        }
        if shape[axis] == 0 {
            return Err(self.err(format!("max over empty axis in {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            let base = o * len * inner;
            let obase = o * inner;
            out[obase..obase + inner].copy_from_slice(&xv[base..base + inner]);
            for j in 1..len {
                let row = &xv[base + j * inner..base + (j + 1) * inner];
                for i in 0..inner {
                    // strict > keeps the first maximal element on ties
                    if row[i] > out[obase + i] {
                        out[obase + i] = row[i];
                        argmax[obase + i] = j;
                    }
                }
            }
        }
        let needs = self.needs(x);
        let out_shape = reduced_shape(&shape, axis);
        Ok(self.push(
            Op::MaxReduce { x, axis, argmax },
            Tensor::from_vec(&out_shape, out).expect("max shape"),
            needs,
        ))
    }

    pub fn sum_reduce(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        self.sum_like(x, axis, false)
    }

    pub fn mean_reduce(&mut self, x: NodeId, axis: usize) -> Result<NodeId, GraphError> {
        self.sum_like(x, axis, true)
    }

    fn sum_like(&mut self, x: NodeId, axis: usize, mean: bool) -> Result<NodeId, GraphError> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if axis >= shape.len() {
            return Err(self.err(format!("reduce axis {axis} out of range for {shape:?}")));
        }
        if shape[axis] == 0 {
            return Err(self.err(format!("reduce over empty axis in {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let base = o * len * inner;
            let obase = o * inner;
            for j in 0..len {
                let row = &xv[base + j * inner..base + (j + 1) * inner];
                for (slot, &v) in out[obase..obase + inner].iter_mut().zip(row) {
                    *slot += v;
                }
            }
        }
        if mean {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let needs = self.needs(x);
        let out_shape = reduced_shape(&shape, axis);
        let op = if mean {
            Op::MeanReduce { x, axis }
        } else {
            Op::SumReduce { x, axis }
        };
        Ok(self.push(
            op,
            Tensor::from_vec(&out_shape, out).expect("reduce shape"),
            needs,
        ))
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
    ) -> Result<(Vec<usize>, bool), GraphError> {
        let sa = self.nodes[a.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape();
        if sa != sb {
            return Err(self.err(format!("{what} shape mismatch: {sa:?} vs {sb:?}")));
        }
        Ok((sa, self.needs(a) || self.needs(b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (shape, needs) = self.elementwise(a, b, "add")?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(
            Op::Add(a, b),
            Tensor::from_vec(&shape, out).expect("add shape"),
            needs,
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (shape, needs) = self.elementwise(a, b, "sub")?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(
            Op::Sub(a, b),
            Tensor::from_vec(&shape, out).expect("sub shape"),
            needs,
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (shape, needs) = self.elementwise(a, b, "mul")?;
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(
            Op::Mul(a, b),
            Tensor::from_vec(&shape, out).expect("mul shape"),
            needs,
        ))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId, GraphError> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        let out: Vec<f64> = self.nodes[x.0].value.data().iter().map(|&v| k * v).collect();
        let needs = self.needs(x);
        Ok(self.push(
            Op::Scale { x, k },
            Tensor::from_vec(&shape, out).expect("scale shape"),
            needs,
        ))
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId, GraphError> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if shape.len() != 2 {
            return Err(self.err(format!("gather_rows wants a 2-D tensor, got {shape:?}")));
        }
        let (r, c) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(self.err(format!("gather index {bad} out of range for {r} rows")));
        }
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![0.0; idx.len() * c];
        for (row, &src) in idx.iter().enumerate() {
            out[row * c..(row + 1) * c].copy_from_slice(&xv[src * c..(src + 1) * c]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            Tensor::from_vec(&[idx.len(), c], out).expect("gather shape"),
            needs,
        ))
    }

    pub fn row_select(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId, GraphError> {
        let shape = self.nodes[x.0].value.shape().to_vec();
        if shape.len() != 2 {
            return Err(self.err(format!("row_select wants a 2-D tensor, got {shape:?}")));
        }
        let (r, c) = (shape[0], shape[1]);
        if cols.len() != r {
            return Err(self.err(format!("row_select wants {r} column picks, got {}", cols.len())));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(self.err(format!("row_select column {bad} out of range for {c} columns")));
        }
        let xv = self.nodes[x.0].value.data();
        let out: Vec<f64> = cols.iter().enumerate().map(|(i, &j)| xv[i * c + j]).collect();
        let needs = self.needs(x);
        Ok(self.push(
            Op::RowSelect {
                x,
                cols: cols.to_vec(),
            },
            Tensor::from_vec(&[r], out).expect("row_select shape"),
            needs,
        ))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId, GraphError> {
        if xs.is_empty() {
            return Err(self.err(String::from("concat of zero tensors")));
        }
        let first = self.nodes[xs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(self.err(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.nodes[x.0].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(self.err(format!("concat shape mismatch: {first:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = vec![0.0; numel(&shape)];
        for o in 0..outer {
            let mut offset = 0;
            for &x in xs {
                let xshape = self.nodes[x.0].value.shape();
                let xlen = xshape[axis];
                let xv = self.nodes[x.0].value.data();
                let src = &xv[o * xlen * inner..(o + 1) * xlen * inner];
                let dst_base = o * total * inner + offset * inner;
                out[dst_base..dst_base + xlen * inner].copy_from_slice(src);
                offset += xlen;
            }
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            Tensor::from_vec(&shape, out).expect("concat shape"),
            needs,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        let v = &self.nodes[x.0].value;
        if numel(shape) != v.len() {
            return Err(self.err(format!(
                "cannot reshape {:?} ({} values) to {:?}",
                v.shape(),
                v.len(),
                shape
            )));
        }
        let out = Tensor::from_vec(shape, v.data().to_vec()).expect("reshape");
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape { x }, out, needs))
    }

    /// Elementwise `ln(max(x, floor))`.
    pub fn ln_clamped(&mut self, x: NodeId, floor: f64) -> Result<NodeId, GraphError> {
        if floor <= 0.0 {
            return Err(self.err(format!("ln_clamped floor must be positive, got {floor}")));
        }
        let v = &self.nodes[x.0].value;
        let mut clamped = 0usize;
        let out: Vec<f64> = v
            .data()
            .iter()
            .map(|&a| {
                if a < floor {
                    clamped += 1;
                    math::ln(floor)
                } else {
                    math::ln(a)
                }
            })
            .collect();
        let shape = v.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Op::LnClamped { x, floor, clamped },
            Tensor::from_vec(&shape, out).expect("ln shape"),
            needs,
        ))
    }

    /// How many elements the given `ln_clamped` node clamped.
    pub fn ln_clamp_count(&self, node: NodeId) -> usize {
        match &self.nodes[node.0].op {
            Op::LnClamped { clamped, .. } => *clamped,
            _ => 0,
        }
    }

    // ---- replay ------------------------------------------------------------

    /// Re-evaluate every recorded node in order. Gather indices stay fixed;
    /// data-dependent internals (batch statistics, argmaxes, clamp counts)
    /// are recomputed.
    pub fn recompute(&mut self) {
        for i in 0..self.nodes.len() {
            // inputs always precede node i, so splitting the arena gives the
            // evaluator a clean immutable view of everything upstream
            let (before, rest) = self.nodes.split_at_mut(i);
            reeval_node(before, &mut rest[0]);
        }
    }

    // ---- backward ------------------------------------------------------------

    /// Accumulate gradients of the scalar `loss` into every node that needs
    /// them. Parameters the loss does not reach keep a zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), GraphError> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(GraphError {
                node: loss.0,
                message: format!(
                    "backward wants a scalar loss, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            backprop_node(&self.nodes, &mut self.grads, i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }
    /// Gradient of the last `backward` with respect to `node`, if any flowed.
    pub fn grad(&self, node: NodeId) -> Option<&[f64]> {
        self.grads[node.0].as_deref()
    }

    /// Gradients for all registered parameters, zero-filled where the loss
    /// did not reach the parameter.
    pub fn param_gradients(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|(name, id)| {
                let shape = self.nodes[id.0].value.shape();
                let data = match &self.grads[id.0] {
                    Some(g) => g.clone(),
                    None => vec![0.0; self.nodes[id.0].value.len()],
                };
                (
                    name.clone(),
                    Tensor::from_vec(shape, data).expect("grad shape"),
                )
            })
            .collect()
    }
}

// ---- backward kernels ------------------------------------------------------

fn needs(nodes: &[Node], id: NodeId) -> bool {
    nodes[id.0].needs_grad
}

fn grad_buf<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: NodeId,
) -> &'a mut Vec<f64> {
    let len = nodes[id.0].value.len();
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

/// Propagate `gout` (the gradient arriving at node `i`) into the node's
/// inputs. `nodes` is only read; `grads[i]` has been taken by the caller.
fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, gout: &[f64]) {
    match &nodes[i].op {
        Op::Leaf(_) => {}
        Op::Linear { x, w, b } => {
            let (x, w, b) = (*x, *w, *b);
            let s = nodes[x.0].value.shape();
            let (r, ic) = (s[0], s[1]);
            let o = nodes[w.0].value.shape()[0];
            if needs(nodes, x) {
                let wv = nodes[w.0].value.data();
                let gx = grad_buf(grads, nodes, x);
                linear_dx(gout, o, ic, wv, gx);
            }
            if needs(nodes, w) {
                let xv = nodes[x.0].value.data();
                let gw = grad_buf(grads, nodes, w);
                linear_dw(gout, o, ic, xv, gw);
            }
            if needs(nodes, b) {
                let gb = grad_buf(grads, nodes, b);
                for row in 0..r {
                    for (slot, &g) in gb.iter_mut().zip(&gout[row * o..(row + 1) * o]) {
                        *slot += g;
                    }
                }
            }
        }
        Op::Relu(x) => {
            let x = *x;
            if needs(nodes, x) {
                let xv = nodes[x.0].value.data();
                let gx = grad_buf(grads, nodes, x);
                for ((slot, &g), &v) in gx.iter_mut().zip(gout).zip(xv) {
                    if v > 0.0 {
                        *slot += g;
                    }
                }
            }
        }
        Op::SoftmaxAxis { x, axis } => {
            let (x, axis) = (*x, *axis);
            if needs(nodes, x) {
                let y = nodes[i].value.data();
                let (outer, len, inner) = axis_split(nodes[i].value.shape(), axis);
                let mut dots = vec![0.0f64; inner];
                let gx = grad_buf(grads, nodes, x);
                for o in 0..outer {
                    let base = o * len * inner;
                    dots.iter_mut().for_each(|d| *d = 0.0);
                    for j in 0..len {
                        let off = base + j * inner;
                        for ii in 0..inner {
                            dots[ii] += gout[off + ii] * y[off + ii];
                        }
                    }
                    for j in 0..len {
                        let off = base + j * inner;
                        for ii in 0..inner {
                            gx[off + ii] += y[off + ii] * (gout[off + ii] - dots[ii]);
                        }
                    }
                }
            }
        }
        Op::BatchNorm {
            x,
            scale,
            shift,
            eps,
            stats,
        } => {
            let (x, scale, shift, eps) = (*x, *scale, *shift, *eps);
            let s = nodes[x.0].value.shape();
            let (r, c) = (s[0], s[1]);
            let (mean, var, batch_mode): (&[f64], &[f64], bool) = match stats {
                BnStats::Batch { mean, var } => (mean, var, true),
                BnStats::Given { mean, var } => (
                    nodes[mean.0].value.data(),
                    nodes[var.0].value.data(),
                    false,
                ),
            };
            let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();
            let xv = nodes[x.0].value.data();
            let sv = nodes[scale.0].value.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for row in 0..r {
                for j in 0..c {
                    let g = gout[row * c + j];
                    let xhat = (xv[row * c + j] - mean[j]) * inv_std[j];
                    sum_g[j] += g;
                    sum_gx[j] += g * xhat;
                }
            }
            if needs(nodes, shift) {
                let gb = grad_buf(grads, nodes, shift);
                for (slot, &v) in gb.iter_mut().zip(&sum_g) {
                    *slot += v;
                }
            }
            if needs(nodes, scale) {
                let gs = grad_buf(grads, nodes, scale);
                for (slot, &v) in gs.iter_mut().zip(&sum_gx) {
                    *slot += v;
                }
            }
            if needs(nodes, x) {
                let rn = r as f64;
                let gx = grad_buf(grads, nodes, x);
                if batch_mode {
                    for row in 0..r {
                        for j in 0..c {
                            let g = gout[row * c + j];
                            let xhat = (xv[row * c + j] - mean[j]) * inv_std[j];
                            gx[row * c + j] +=
                                sv[j] * inv_std[j] * (g - sum_g[j] / rn - xhat * sum_gx[j] / rn);
                        }
                    }
                } else {
                    for row in 0..r {
                        for j in 0..c {
                            gx[row * c + j] += sv[j] * inv_std[j] * gout[row * c + j];
                        }
                    }
                }
            }
        }
        Op::MaxReduce { x, axis, argmax } => {
            let (x, axis) = (*x, *axis);
            if needs(nodes, x) {
                let (outer, len, inner) = axis_split(nodes[x.0].value.shape(), axis);
                let gx = grad_buf(grads, nodes, x);
                for o in 0..outer {
                    for ii in 0..inner {
                        let j = argmax[o * inner + ii];
                        gx[(o * len + j) * inner + ii] += gout[o * inner + ii];
                    }
                }
            }
        }
        Op::SumReduce { x, axis } | Op::MeanReduce { x, axis } => {
            let (x, axis) = (*x, *axis);
            if needs(nodes, x) {
                let is_mean = matches!(nodes[i].op, Op::MeanReduce { .. });
                let (outer, len, inner) = axis_split(nodes[x.0].value.shape(), axis);
                let k = if is_mean { 1.0 / len as f64 } else { 1.0 };
                let gx = grad_buf(grads, nodes, x);
                for o in 0..outer {
                    for j in 0..len {
                        let off = (o * len + j) * inner;
                        for ii in 0..inner {
                            gx[off + ii] += k * gout[o * inner + ii];
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            let (a, b) = (*a, *b);
            if needs(nodes, a) {
                let ga = grad_buf(grads, nodes, a);
                for (slot, &g) in ga.iter_mut().zip(gout) {
                    *slot += g;
                }
            }
            if needs(nodes, b) {
                let gb = grad_buf(grads, nodes, b);
                for (slot, &g) in gb.iter_mut().zip(gout) {
                    *slot += g;
                }
            }
        }
        Op::Sub(a, b) => {
            let (a, b) = (*a, *b);
            if needs(nodes, a) {
                let ga = grad_buf(grads, nodes, a);
                for (slot, &g) in ga.iter_mut().zip(gout) {
                    *slot += g;
                }
            }
            if needs(nodes, b) {
                let gb = grad_buf(grads, nodes, b);
                for (slot, &g) in gb.iter_mut().zip(gout) {
                    *slot -= g;
                }
            }
        }
        Op::Mul(a, b) => {
            let (a, b) = (*a, *b);
            if needs(nodes, a) {
                let bv = nodes[b.0].value.data();
                let ga = grad_buf(grads, nodes, a);
                for ((slot, &g), &v) in ga.iter_mut().zip(gout).zip(bv) {
                    *slot += g * v;
                }
            }
            if needs(nodes, b) {
                let av = nodes[a.0].value.data();
                let gb = grad_buf(grads, nodes, b);
                for ((slot, &g), &v) in gb.iter_mut().zip(gout).zip(av) {
                    *slot += g * v;
                }
            }
        }
        Op::Scale { x, k } => {
            let (x, k) = (*x, *k);
            if needs(nodes, x) {
                let gx = grad_buf(grads, nodes, x);
                for (slot, &g) in gx.iter_mut().zip(gout) {
                    *slot += k * g;
                }
            }
        }
        Op::GatherRows { x, idx } => {
            let x = *x;
            if needs(nodes, x) {
                let c = nodes[x.0].value.cols();
                let gx = grad_buf(grads, nodes, x);
                for (row, &src) in idx.iter().enumerate() {
                    let grow = &gout[row * c..(row + 1) * c];
                    for (slot, &g) in gx[src * c..(src + 1) * c].iter_mut().zip(grow) {
                        *slot += g;
                    }
                }
            }
        }
        Op::RowSelect { x, cols } => {
            let x = *x;
            if needs(nodes, x) {
                let c = nodes[x.0].value.cols();
                let gx = grad_buf(grads, nodes, x);
                for (row, &j) in cols.iter().enumerate() {
                    gx[row * c + j] += gout[row];
                }
            }
        }
        Op::Concat { xs, axis } => {
            let axis = *axis;
            let (outer, total, inner) = axis_split(nodes[i].value.shape(), axis);
            let mut offset = 0;
            for &x in xs {
                let xlen = nodes[x.0].value.shape()[axis];
                if needs(nodes, x) {
                    let gx = grad_buf(grads, nodes, x);
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        let dst = o * xlen * inner;
                        for ii in 0..xlen * inner {
                            gx[dst + ii] += gout[src + ii];
                        }
                    }
                }
                offset += xlen;
            }
        }
        Op::Reshape { x } => {
            let x = *x;
            if needs(nodes, x) {
                let gx = grad_buf(grads, nodes, x);
                for (slot, &g) in gx.iter_mut().zip(gout) {
                    *slot += g;
                }
            }
        }
        Op::LnClamped { x, floor, .. } => {
            let (x, floor) = (*x, *floor);
            if needs(nodes, x) {
                let xv = nodes[x.0].value.data();
                let gx = grad_buf(grads, nodes, x);
                for ((slot, &g), &v) in gx.iter_mut().zip(gout).zip(xv) {
                    if v >= floor {
                        *slot += g / v;
                    }
                }
            }
        }
    }
}

/// Recompute `node`'s value from `before` (every node with a lower id).
/// Batch statistics, argmaxes and clamp counters are refreshed in place.
fn reeval_node(before: &[Node], node: &mut Node) {
    let value = match &mut node.op {
        Op::Leaf(_) => return,
        Op::Linear { x, w, b } => {
            let s = before[x.0].value.shape();
            let (r, ic) = (s[0], s[1]);
            let o = before[w.0].value.shape()[0];
            linear_eval(
                before[x.0].value.data(),
                r,
                ic,
                before[w.0].value.data(),
                o,
                before[b.0].value.data(),
                node.value.data_mut(),
            );
            return;
        }
        Op::Relu(x) => {
            let xv = before[x.0].value.data();
            for (slot, &v) in node.value.data_mut().iter_mut().zip(xv) {
                *slot = if v > 0.0 { v } else { 0.0 };
            }
            return;
        }
        Op::SoftmaxAxis { x, axis } => softmax_eval(&before[x.0].value, *axis),
        Op::BatchNorm {
            x,
            scale,
            shift,
            eps,
            stats,
        } => {
            let xt = &before[x.0].value;
            match stats {
                BnStats::Given { mean, var } => bn_eval(
                    xt,
                    before[scale.0].value.data(),
                    before[shift.0].value.data(),
                    before[mean.0].value.data(),
                    before[var.0].value.data(),
                    *eps,
                ),
                BnStats::Batch { mean, var } => {
                    let (m, v) = batch_stats(xt);
                    let out = bn_eval(
                        xt,
                        before[scale.0].value.data(),
                        before[shift.0].value.data(),
                        &m,
                        &v,
                        *eps,
                    );
                    *mean = m;
                    *var = v;
                    out
                }
            }
        }
        Op::MaxReduce { x, axis, argmax } => {
            let (out, am) = max_eval(&before[x.0].value, *axis);
            *argmax = am;
            out
        }
        Op::SumReduce { x, axis } => sum_eval(&before[x.0].value, *axis, false),
        Op::MeanReduce { x, axis } => sum_eval(&before[x.0].value, *axis, true),
        Op::Add(a, b) => {
            let av = before[a.0].value.data();
            let bv = before[b.0].value.data();
            for ((slot, &x), &y) in node.value.data_mut().iter_mut().zip(av).zip(bv) {
                *slot = x + y;
            }
            return;
        }
        Op::Sub(a, b) => {
            let av = before[a.0].value.data();
            let bv = before[b.0].value.data();
            for ((slot, &x), &y) in node.value.data_mut().iter_mut().zip(av).zip(bv) {
                *slot = x - y;
            }
            return;
        }
        Op::Mul(a, b) => {
            let av = before[a.0].value.data();
            let bv = before[b.0].value.data();
            for ((slot, &x), &y) in node.value.data_mut().iter_mut().zip(av).zip(bv) {
                *slot = x * y;
            }
            return;
        }
        Op::Scale { x, k } => {
            let k = *k;
            let xv = before[x.0].value.data();
            for (slot, &v) in node.value.data_mut().iter_mut().zip(xv) {
                *slot = k * v;
            }
            return;
        }
        Op::GatherRows { x, idx } => {
            let v = &before[x.0].value;
            let c = v.cols();
            let out = node.value.data_mut();
            for (row, &src) in idx.iter().enumerate() {
                out[row * c..(row + 1) * c].copy_from_slice(&v.data()[src * c..(src + 1) * c]);
            }
            return;
        }
        Op::RowSelect { x, cols } => {
            let v = &before[x.0].value;
            let c = v.cols();
            let out = node.value.data_mut();
            for (row, &j) in cols.iter().enumerate() {
                out[row] = v.data()[row * c + j];
            }
            return;
        }
        Op::Concat { xs, axis } => {
            let shape = node.value.shape();
            let (outer, total, inner) = axis_split(shape, *axis);
            let axis = *axis;
            let mut out = vec![0.0; node.value.len()];
            for o in 0..outer {
                let mut offset = 0;
                for &x in xs.iter() {
                    let xlen = before[x.0].value.shape()[axis];
                    let xv = before[x.0].value.data();
                    let src = &xv[o * xlen * inner..(o + 1) * xlen * inner];
                    let dst = o * total * inner + offset * inner;
                    out[dst..dst + xlen * inner].copy_from_slice(src);
                    offset += xlen;
                }
            }
            node.value.data_mut().copy_from_slice(&out);
            return;
        }
        Op::Reshape { x } => {
            let xv = before[x.0].value.data();
            node.value.data_mut().copy_from_slice(xv);
            return;
        }
        Op::LnClamped { x, floor, clamped } => {
            let floor = *floor;
            let xv = before[x.0].value.data();
            let mut count = 0usize;
            // two-pass to keep the borrow on `clamped` short
            let out: Vec<f64> = xv
                .iter()
                .map(|&a| {
                    if a < floor {
                        count += 1;
                        math::ln(floor)
                    } else {
                        math::ln(a)
                    }
                })
                .collect();
            *clamped = count;
            node.value.data_mut().copy_from_slice(&out);
            return;
        }
    };
    node.value = value;
}

// ---- shared eval helpers (used by recompute) -----------------------------

fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (r, c) = (x.rows(), x.cols());
    let xv = x.data();
    let mut mean = vec![0.0; c];
    for row in 0..r {
        for (m, &v) in mean.iter_mut().zip(&xv[row * c..(row + 1) * c]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= r as f64);
    let mut var = vec![0.0; c];
    for row in 0..r {
        for ((vv, &v), &m) in var.iter_mut().zip(&xv[row * c..(row + 1) * c]).zip(&mean) {
            let d = v - m;
            *vv += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= r as f64);
    (mean, var)
}

fn bn_eval(x: &Tensor, scale: &[f64], shift: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let xv = x.data();
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + eps)).collect();
    let mut out = vec![0.0; r * c];
    for row in 0..r {
        let src = &xv[row * c..(row + 1) * c];
        let dst = &mut out[row * c..(row + 1) * c];
        for j in 0..c {
            dst[j] = scale[j] * (src[j] - mean[j]) * inv_std[j] + shift[j];
        }
    }
    Tensor::from_vec(&[r, c], out).expect("bn shape")
}

fn softmax_eval(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape().to_vec();
    let (outer, len, inner) = axis_split(&shape, axis);
    let xv = x.data();
    let mut out = vec![0.0; xv.len()];
    let mut maxes = vec![0.0f64; inner];
    let mut sums = vec![0.0f64; inner];
    for o in 0..outer {
        let base = o * len * inner;
        maxes.copy_from_slice(&xv[base..base + inner]);
        for j in 1..len {
            let row = &xv[base + j * inner..base + (j + 1) * inner];
            for (m, &v) in maxes.iter_mut().zip(row) {
                if v > *m {
                    *m = v;
                }
            }
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..len {
            let src = &xv[base + j * inner..base + (j + 1) * inner];
            let dst = &mut out[base + j * inner..base + (j + 1) * inner];
            for ((d, &v), (&m, s)) in dst.iter_mut().zip(src).zip(maxes.iter().zip(sums.iter_mut()))
            {
                let e = math::exp(v - m);
                *d = e;
                *s += e;
            }
        }
        for j in 0..len {
            let dst = &mut out[base + j * inner..base + (j + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(sums.iter()) {
                *d /= s;
            }
        }
    }
    Tensor::from_vec(&shape, out).expect("softmax shape")
}

fn max_eval(x: &Tensor, axis: usize) -> (Tensor, Vec<usize>) {
    let shape = x.shape().to_vec();
    let (outer, len, inner) = axis_split(&shape, axis);
    let xv = x.data();
    let mut out = vec![0.0; outer * inner];
    let mut argmax = vec![0usize; outer * inner];
    for o in 0..outer {
        let base = o * len * inner;
        let obase = o * inner;
        out[obase..obase + inner].copy_from_slice(&xv[base..base + inner]);
        for j in 1..len {
            let row = &xv[base + j * inner..base + (j + 1) * inner];
            for i in 0..inner {
                if row[i] > out[obase + i] {
                    out[obase + i] = row[i];
                    argmax[obase + i] = j;
                }
            }
        }
    }
    (
        Tensor::from_vec(&reduced_shape(&shape, axis), out).expect("max shape"),
        argmax,
    )
}

fn sum_eval(x: &Tensor, axis: usize, mean: bool) -> Tensor {
    let shape = x.shape().to_vec();
    let (outer, len, inner) = axis_split(&shape, axis);
    let xv = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let base = o * len * inner;
        let obase = o * inner;
        for j in 0..len {
            let row = &xv[base + j * inner..base + (j + 1) * inner];
            for (slot, &v) in out[obase..obase + inner].iter_mut().zip(row) {
                *slot += v;
            }
        }
    }
    if mean {
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::from_vec(&reduced_shape(&shape, axis), out).expect("reduce shape")
}
