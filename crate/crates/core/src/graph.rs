//! Tape-based reverse-mode automatic differentiation with support for
//! gradients of gradients.
//!
//! Every operation appends a node to an append-only tape and computes its
//! forward value eagerly. [`Graph::backward`] walks the tape in reverse and
//! expresses each backward rule *in terms of tape operations*, so the
//! returned gradients are themselves differentiable variables. Calling
//! `backward` on an expression built from those gradients yields exact
//! second-order derivatives — this is what lets the meta-objective be
//! differentiated through inner-loop gradient updates.
//!
//! Shape mismatches are programmer errors and panic with a dimension
//! message. A single graph is confined to one thread; independent graphs
//! may run in parallel.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;

/// Handle to a variable on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Neg(VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    AddConst(VarId),
    /// `[1,1]` scalar times tensor.
    SMul(VarId, VarId),
    /// Flattened inner product of two equally sized tensors, yields `[1,1]`.
    Dot(VarId, VarId),
    MatMul(VarId, VarId),
    Transpose(VarId),
    SumAll(VarId),
    SumRows(VarId),
    BroadcastRows(VarId),
    SumCols(VarId),
    BroadcastCols(VarId),
    /// Shift rows toward larger indices (positive offset) with zero fill.
    ShiftRows(VarId, isize),
    ConcatCols(Vec<VarId>),
    SliceCols(VarId, usize),
    /// `(src, start)` with the target width taken from the output shape.
    PadCols(VarId, usize),
    RowGather(VarId, Vec<usize>),
    /// Scatter-add rows by index; duplicates accumulate.
    RowScatter(VarId, Vec<usize>),
    Exp(VarId),
    Ln(VarId),
    Recip(VarId),
    Tanh(VarId),
    Sigmoid(VarId),
    LeakyRelu(VarId, f64),
    /// Elementwise product with a constant mask (dropout, sign masks, ...).
    MulMask(VarId, Tensor),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// The recording tape. Nodes are append-only and topologically ordered:
/// every node's operands precede it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: VarId) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> VarId {
        // Non-finite values are allowed to propagate (a diverged fine-tune
        // overflows exp); the training loop rejects non-finite gradients.
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn rg(&self, v: VarId) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf (parameter).
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value, true)
    }

    /// A constant leaf; never a differentiation target.
    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&mut self, v: f64) -> VarId {
        self.constant(Tensor::scalar(v))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), v, g)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), v, g)
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(|x| -x);
        let g = self.rg(a);
        self.push(Op::Neg(a), v, g)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), v, g)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.value(a).map(|x| x * c);
        let g = self.rg(a);
        self.push(Op::Scale(a, c), v, g)
    }

    pub fn add_const(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.value(a).map(|x| x + c);
        let g = self.rg(a);
        self.push(Op::AddConst(a), v, g)
    }

    pub fn smul(&mut self, s: VarId, a: VarId) -> VarId {
        let sv = self.value(s).scalar_value();
        let v = self.value(a).map(|x| sv * x);
        let g = self.rg(s) || self.rg(a);
        self.push(Op::SMul(s, a), v, g)
    }

    pub fn dot(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.len(),
            tb.len(),
            "dot of buffers with {} vs {} elements",
            ta.len(),
            tb.len()
        );
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(x, y)| x * y)
            .sum();
        let g = self.rg(a) || self.rg(b);
        self.push(Op::Dot(a, b), Tensor::scalar(s), g)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2} ([{m}x{k}]·[{k2}x{n}])");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let av = ta.get(i, l);
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += av * tb.get(l, j);
                }
            }
        }
        let g = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out), g)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.get(i, j);
            }
        }
        let g = self.rg(a);
        self.push(Op::Transpose(a), Tensor::matrix(n, m, out), g)
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let s: f64 = self.value(a).data().iter().sum();
        let g = self.rg(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), g)
    }

    pub fn sum_rows(&mut self, a: VarId) -> VarId {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (j, o) in out.iter_mut().enumerate() {
                *o += t.get(i, j);
            }
        }
        let g = self.rg(a);
        self.push(Op::SumRows(a), Tensor::row(out), g)
    }

    pub fn broadcast_rows(&mut self, a: VarId, rows: usize) -> VarId {
        let t = self.value(a);
        assert_eq!(t.rows(), 1, "broadcast_rows expects a [1,n] input");
        let n = t.cols();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(t.data());
        }
        let g = self.rg(a);
        self.push(Op::BroadcastRows(a), Tensor::matrix(rows, n, out), g)
    }

    pub fn sum_cols(&mut self, a: VarId) -> VarId {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..n {
                *o += t.get(i, j);
            }
        }
        let g = self.rg(a);
        self.push(Op::SumCols(a), Tensor::col(out), g)
    }

    pub fn broadcast_cols(&mut self, a: VarId, cols: usize) -> VarId {
        let t = self.value(a);
        assert_eq!(t.cols(), 1, "broadcast_cols expects an [n,1] input");
        let m = t.rows();
        let mut out = Vec::with_capacity(m * cols);
        for i in 0..m {
            for _ in 0..cols {
                out.push(t.get(i, 0));
            }
        }
        let g = self.rg(a);
        self.push(Op::BroadcastCols(a), Tensor::matrix(m, cols, out), g)
    }

    /// Rows move toward larger indices for positive offsets; vacated rows
    /// are zero-filled. This is the primitive behind causal padding.
    pub fn shift_rows(&mut self, a: VarId, offset: isize) -> VarId {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m as isize {
            let src = i - offset;
            if src >= 0 && src < m as isize {
                for j in 0..n {
                    out[i as usize * n + j] = t.get(src as usize, j);
                }
            }
        }
        let g = self.rg(a);
        self.push(Op::ShiftRows(a, offset), Tensor::matrix(m, n, out), g)
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat_cols of zero tensors");
        let m = self.value(parts[0]).rows();
        let total: usize = parts
            .iter()
            .map(|&p| {
                let t = self.value(p);
                assert_eq!(t.rows(), m, "concat_cols row mismatch");
                t.cols()
            })
            .sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let t = self.value(p);
                for j in 0..t.cols() {
                    out.push(t.get(i, j));
                }
            }
        }
        let g = parts.iter().any(|&p| self.rg(p));
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::matrix(m, total, out),
            g,
        )
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> VarId {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert!(
            start + len <= n,
            "slice_cols [{start}, {}) out of {n} columns",
            start + len
        );
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            for j in 0..len {
                out.push(t.get(i, start + j));
            }
        }
        let g = self.rg(a);
        self.push(Op::SliceCols(a, start), Tensor::matrix(m, len, out), g)
    }

    pub fn pad_cols(&mut self, a: VarId, total: usize, start: usize) -> VarId {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert!(start + n <= total, "pad_cols overflow");
        let mut out = vec![0.0; m * total];
        for i in 0..m {
            for j in 0..n {
                out[i * total + start + j] = t.get(i, j);
            }
        }
        let g = self.rg(a);
        self.push(Op::PadCols(a, start), Tensor::matrix(m, total, out), g)
    }

    pub fn row_gather(&mut self, table: VarId, indices: &[usize]) -> VarId {
        let t = self.value(table);
        let (rows, n) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            assert!(i < rows, "row index {i} out of {rows} rows");
            for j in 0..n {
                out.push(t.get(i, j));
            }
        }
        let g = self.rg(table);
        self.push(
            Op::RowGather(table, indices.to_vec()),
            Tensor::matrix(indices.len(), n, out),
            g,
        )
    }

    pub fn row_scatter(&mut self, src: VarId, indices: &[usize], out_rows: usize) -> VarId {
        let t = self.value(src);
        let (m, n) = (t.rows(), t.cols());
        assert_eq!(m, indices.len(), "row_scatter index count mismatch");
        let mut out = vec![0.0; out_rows * n];
        for (r, &i) in indices.iter().enumerate() {
            assert!(i < out_rows, "scatter index {i} out of {out_rows} rows");
            for j in 0..n {
                out[i * n + j] += t.get(r, j);
            }
        }
        let g = self.rg(src);
        self.push(
            Op::RowScatter(src, indices.to_vec()),
            Tensor::matrix(out_rows, n, out),
            g,
        )
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(math::exp);
        let g = self.rg(a);
        self.push(Op::Exp(a), v, g)
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(math::ln);
        let g = self.rg(a);
        self.push(Op::Ln(a), v, g)
    }

    pub fn recip(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(|x| 1.0 / x);
        let g = self.rg(a);
        self.push(Op::Recip(a), v, g)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(math::tanh);
        let g = self.rg(a);
        self.push(Op::Tanh(a), v, g)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = self.value(a).map(math::sigmoid);
        let g = self.rg(a);
        self.push(Op::Sigmoid(a), v, g)
    }

    pub fn leaky_relu(&mut self, a: VarId, slope: f64) -> VarId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let g = self.rg(a);
        self.push(Op::LeakyRelu(a, slope), v, g)
    }

    pub fn mul_mask(&mut self, a: VarId, mask: Tensor) -> VarId {
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        let g = self.rg(a);
        self.push(Op::MulMask(a, mask), v, g)
    }

    /// Detaches a variable: a constant leaf carrying the same value.
    /// Used by the first-order mode to stop meta-gradients at the inner
    /// gradients.
    pub fn detach(&mut self, a: VarId) -> VarId {
        let v = self.value(a).clone();
        self.constant(v)
    }

    /// Reverse pass from a scalar loss toward `targets`, returning the
    /// gradient variable for each target in order.
    ///
    /// The backward rules are recorded on the same tape, so the returned
    /// gradients can participate in further differentiation. Targets with
    /// no path from the loss get zero tensors. Panics if the loss is not a
    /// scalar or a target does not require gradients.
    pub fn backward(&mut self, loss: VarId, targets: &[VarId]) -> Vec<VarId> {
        assert!(
            self.value(loss).is_scalar(),
            "backward target must be a scalar loss, shape {:?}",
            self.value(loss).shape()
        );
        for &t in targets {
            assert!(
                self.rg(t),
                "variable {} does not require gradients and cannot be a differentiation target",
                t.0
            );
        }
        let mut adjoints: Vec<Option<VarId>> = vec![None; loss.0 + 1];
        let seed = self.scalar(1.0);
        adjoints[loss.0] = Some(seed);

        for id in (0..=loss.0).rev() {
            let adj = match adjoints[id] {
                Some(a) => a,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(x, y) => {
                    self.accumulate(&mut adjoints, x, adj);
                    self.accumulate(&mut adjoints, y, adj);
                }
                Op::Sub(x, y) => {
                    self.accumulate(&mut adjoints, x, adj);
                    let n = self.neg(adj);
                    self.accumulate(&mut adjoints, y, n);
                }
                Op::Neg(x) => {
                    let n = self.neg(adj);
                    self.accumulate(&mut adjoints, x, n);
                }
                Op::Mul(x, y) => {
                    if self.rg(x) {
                        let g = self.mul(adj, y);
                        self.accumulate(&mut adjoints, x, g);
                    }
                    if self.rg(y) {
                        let g = self.mul(adj, x);
                        self.accumulate(&mut adjoints, y, g);
                    }
                }
                Op::Scale(x, c) => {
                    let g = self.scale(adj, c);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::AddConst(x) => {
                    self.accumulate(&mut adjoints, x, adj);
                }
                Op::SMul(s, x) => {
                    if self.rg(s) {
                        let g = self.dot(adj, x);
                        self.accumulate(&mut adjoints, s, g);
                    }
                    if self.rg(x) {
                        let g = self.smul(s, adj);
                        self.accumulate(&mut adjoints, x, g);
                    }
                }
                Op::Dot(x, y) => {
                    if self.rg(x) {
                        let g = self.smul(adj, y);
                        self.accumulate(&mut adjoints, x, g);
                    }
                    if self.rg(y) {
                        let g = self.smul(adj, x);
                        self.accumulate(&mut adjoints, y, g);
                    }
                }
                Op::MatMul(x, y) => {
                    if self.rg(x) {
                        let yt = self.transpose(y);
                        let g = self.matmul(adj, yt);
                        self.accumulate(&mut adjoints, x, g);
                    }
                    if self.rg(y) {
                        let xt = self.transpose(x);
                        let g = self.matmul(xt, adj);
                        self.accumulate(&mut adjoints, y, g);
                    }
                }
                Op::Transpose(x) => {
                    let g = self.transpose(adj);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::SumAll(x) => {
                    let ones = {
                        let t = self.value(x);
                        Tensor::filled(t.rows(), t.cols(), 1.0)
                    };
                    let ones = self.constant(ones);
                    let g = self.smul(adj, ones);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::SumRows(x) => {
                    let rows = self.value(x).rows();
                    let g = self.broadcast_rows(adj, rows);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::BroadcastRows(x) => {
                    let g = self.sum_rows(adj);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::SumCols(x) => {
                    let cols = self.value(x).cols();
                    let g = self.broadcast_cols(adj, cols);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::BroadcastCols(x) => {
                    let g = self.sum_cols(adj);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::ShiftRows(x, offset) => {
                    let g = self.shift_rows(adj, -offset);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(p).cols();
                        if self.rg(p) {
                            let g = self.slice_cols(adj, off, w);
                            self.accumulate(&mut adjoints, p, g);
                        }
                        off += w;
                    }
                }
                Op::SliceCols(x, start) => {
                    let total = self.value(x).cols();
                    let g = self.pad_cols(adj, total, start);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::PadCols(x, start) => {
                    let len = self.value(x).cols();
                    let g = self.slice_cols(adj, start, len);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::RowGather(table, indices) => {
                    let rows = self.value(table).rows();
                    let g = self.row_scatter(adj, &indices, rows);
                    self.accumulate(&mut adjoints, table, g);
                }
                Op::RowScatter(src, indices) => {
                    let g = self.row_gather(adj, &indices);
                    self.accumulate(&mut adjoints, src, g);
                }
                Op::Exp(x) => {
                    let y = VarId(id);
                    let g = self.mul(adj, y);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::Ln(x) => {
                    let r = self.recip(x);
                    let g = self.mul(adj, r);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::Recip(x) => {
                    let y = VarId(id);
                    let yy = self.mul(y, y);
                    let m = self.mul(adj, yy);
                    let g = self.neg(m);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::Tanh(x) => {
                    let y = VarId(id);
                    let yy = self.mul(y, y);
                    let nyy = self.neg(yy);
                    let d = self.add_const(nyy, 1.0);
                    let g = self.mul(adj, d);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::Sigmoid(x) => {
                    let y = VarId(id);
                    let ny = self.neg(y);
                    let omy = self.add_const(ny, 1.0);
                    let d = self.mul(y, omy);
                    let g = self.mul(adj, d);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::LeakyRelu(x, slope) => {
                    // a.e. derivative: 1 above zero, `slope` at or below.
                    let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { slope });
                    let g = self.mul_mask(adj, mask);
                    self.accumulate(&mut adjoints, x, g);
                }
                Op::MulMask(x, mask) => {
                    let g = self.mul_mask(adj, mask);
                    self.accumulate(&mut adjoints, x, g);
                }
            }
        }

        targets
            .iter()
            .map(|&t| match adjoints[t.0] {
                Some(g) => g,
                None => {
                    let z = self.value(t).zeros_like();
                    self.constant(z)
                }
            })
            .collect()
    }

    fn accumulate(&mut self, adjoints: &mut [Option<VarId>], target: VarId, grad: VarId) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        adjoints[target.0] = Some(match adjoints[target.0] {
            None => grad,
            Some(prev) => self.add(prev, grad),
        });
    }

    /// Text listing of the tape for debugging.
    pub fn dump(&self) -> String {
        use core::fmt::Write;
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "%{i}: {:?} shape={:?} grad={}",
                n.op,
                n.value.shape(),
                n.requires_grad
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn record_mul_scalars() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(3.0));
        let c = g.mul(a, b);
        assert_eq!(g.value(c).scalar_value(), 6.0);
    }

    #[test]
    fn record_mean_over_axis() {
        // mean over the last axis of [[1, 3]] via sum_cols + scale
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 3.0]));
        let s = g.sum_cols(x);
        let m = g.scale(s, 0.5);
        assert_eq!(g.value(m).scalar_value(), 2.0);
    }

    #[test]
    fn backward_of_square() {
        // loss = θ², θ = 3 → grad 6
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(3.0));
        let loss = g.mul(theta, theta);
        let grads = g.backward(loss, &[theta]);
        assert_eq!(g.value(grads[0]).scalar_value(), 6.0);
    }

    #[test]
    fn backward_of_disconnected_is_zero() {
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(3.0));
        let c = g.leaf(Tensor::scalar(5.0));
        let loss = g.mul(c, c);
        let grads = g.backward(loss, &[theta]);
        assert_eq!(g.value(grads[0]).scalar_value(), 0.0);
    }

    #[test]
    fn backward_of_half_square_shift() {
        // loss = ½(θ−1)², θ = 0 → grad −1
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(0.0));
        let d = g.add_const(theta, -1.0);
        let sq = g.mul(d, d);
        let loss = g.scale(sq, 0.5);
        let grads = g.backward(loss, &[theta]);
        assert_eq!(g.value(grads[0]).scalar_value(), -1.0);
    }

    #[test]
    fn second_order_through_inner_update() {
        // L_train = ½(θ−1)², L_test = ½(θ'−2)², θ = 0, β_T = 0.5, one step.
        // θ' = θ − β·(θ−1) = 0.5; meta-grad = (1−β)(θ'−2) = −0.75.
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(0.0));
        let d = g.add_const(theta, -1.0);
        let sq = g.mul(d, d);
        let l_train = g.scale(sq, 0.5);
        let grads = g.backward(l_train, &[theta]);
        let step = g.scale(grads[0], 0.5);
        let theta_p = g.sub(theta, step);
        assert_eq!(g.value(theta_p).scalar_value(), 0.5);
        let d2 = g.add_const(theta_p, -2.0);
        let sq2 = g.mul(d2, d2);
        let l_test = g.scale(sq2, 0.5);
        let meta = g.backward(l_test, &[theta]);
        assert!((g.value(meta[0]).scalar_value() - (-0.75)).abs() < 1e-12);
    }

    #[test]
    fn second_order_degenerate_step_size() {
        // β_T = 0 → meta-gradient equals the plain gradient of L_test at θ.
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(0.0));
        let d = g.add_const(theta, -1.0);
        let sq = g.mul(d, d);
        let l_train = g.scale(sq, 0.5);
        let grads = g.backward(l_train, &[theta]);
        let step = g.scale(grads[0], 0.0);
        let theta_p = g.sub(theta, step);
        let d2 = g.add_const(theta_p, -2.0);
        let sq2 = g.mul(d2, d2);
        let l_test = g.scale(sq2, 0.5);
        let meta = g.backward(l_test, &[theta]);
        assert!((g.value(meta[0]).scalar_value() - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn first_order_detaches_inner_gradient() {
        // Same setup, detached inner gradient → meta-grad = (θ'−2) = −1.5.
        let mut g = Graph::new();
        let theta = g.leaf(Tensor::scalar(0.0));
        let d = g.add_const(theta, -1.0);
        let sq = g.mul(d, d);
        let l_train = g.scale(sq, 0.5);
        let grads = g.backward(l_train, &[theta]);
        let detached = g.detach(grads[0]);
        let step = g.scale(detached, 0.5);
        let theta_p = g.sub(theta, step);
        let d2 = g.add_const(theta_p, -2.0);
        let sq2 = g.mul(d2, d2);
        let l_test = g.scale(sq2, 0.5);
        let meta = g.backward(l_test, &[theta]);
        assert!((g.value(meta[0]).scalar_value() - (-1.5)).abs() < 1e-12);
    }

    #[test]
    fn linearity_of_backward() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![0.3, -1.2, 2.0]));
        let sq = g.mul(x, x);
        let l1 = g.sum_all(sq);
        let e = g.exp(x);
        let l2 = g.sum_all(e);
        let a = g.scale(l1, 2.5);
        let b = g.scale(l2, -0.75);
        let combo = g.add(a, b);
        let gc = g.backward(combo, &[x]);
        let g1 = g.backward(l1, &[x]);
        let g2 = g.backward(l2, &[x]);
        for j in 0..3 {
            let lhs = g.value(gc[0]).data()[j];
            let rhs = 2.5 * g.value(g1[0]).data()[j] - 0.75 * g.value(g2[0]).data()[j];
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn non_scalar_loss_panics() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let y = g.mul(x, x);
        g.backward(y, &[x]);
    }

    #[test]
    #[should_panic(expected = "matmul inner dims")]
    fn matmul_shape_mismatch_panics() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.leaf(Tensor::matrix(2, 2, vec![0.0; 4]));
        g.matmul(a, b);
    }

    #[test]
    #[should_panic(expected = "does not require gradients")]
    fn constant_cannot_be_target() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(1.0));
        let l = g.mul(c, c);
        g.backward(l, &[c]);
    }

    #[test]
    fn scatter_gather_roundtrip_grad() {
        let mut g = Graph::new();
        let table = g.leaf(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]));
        let rows = g.row_gather(table, &[2, 0, 2]);
        let s = g.sum_all(rows);
        let grads = g.backward(s, &[table]);
        // row 2 gathered twice, row 0 once, row 1 never
        assert_eq!(
            g.value(grads[0]).data(),
            &[1., 1., 0., 0., 2., 2.]
        );
    }

    #[test]
    fn shift_rows_is_causal_pad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::col(vec![1., 2., 3.]));
        let y = g.shift_rows(x, 1);
        assert_eq!(g.value(y).data(), &[0., 1., 2.]);
        let z = g.shift_rows(x, -1);
        assert_eq!(g.value(z).data(), &[2., 3., 0.]);
    }

    #[test]
    fn determinism_same_ops_same_bits() {
        let run = || {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::row(vec![0.1, -0.7, 1.3, 2.9]));
            let e = g.exp(x);
            let t = g.tanh(e);
            let l = g.sum_all(t);
            let grads = g.backward(l, &[x]);
            g.value(grads[0]).data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
