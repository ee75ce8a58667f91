//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! A [`Graph`] is built fresh for every forward pass: leaves go in first,
//! operations append nodes in topological order, and [`Graph::backward`]
//! replays the record once in reverse. After backward the graph is finished;
//! gradients stay readable but no further operations or backward passes are
//! accepted. Every operation validates shapes up front and checks its output
//! for NaN/Inf, so a poisoned value surfaces at the op that produced it.

use super::mat::{softmax_rows, Mat};
use super::AutodiffError;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    RowSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowMean(NodeId),
    ReplicateRows(NodeId),
    StackScalars(Vec<NodeId>),
    Mse(NodeId, NodeId),
    BceWithLogits(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowMean(..) => "row_mean",
            Op::ReplicateRows(..) => "replicate_rows",
            Op::StackScalars(..) => "stack_scalars",
            Op::Mse(..) => "mse",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }
}

/// Recorded forward pass plus per-node gradient slots.
pub struct Graph {
    values: Vec<Mat>,
    grads: Vec<Option<Mat>>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    finished: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
            requires: Vec::new(),
            finished: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Inserts a leaf. `requires_grad` marks it as a gradient target.
    pub fn leaf(&mut self, value: Mat, requires_grad: bool) -> Result<NodeId, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: "leaf" });
        }
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives gradient (inputs, targets, noise).
    pub fn constant(&mut self, value: Mat) -> Result<NodeId, AutodiffError> {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.values[id.0]
    }

    /// Gradient of the last backward pass w.r.t. node `id`, if any flowed there.
    pub fn grad(&self, id: NodeId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    fn push(&mut self, value: Mat, op: Op, requires: bool) -> Result<NodeId, AutodiffError> {
        if self.finished {
            return Err(AutodiffError::GraphFinished);
        }
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.requires.push(requires);
        Ok(NodeId(self.values.len() - 1))
    }

    fn req(&self, id: NodeId) -> bool {
        self.requires[id.0]
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if !va.same_shape(vb) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: (va.rows(), va.cols()),
                rhs: (vb.rows(), vb.cols()),
            });
        }
        Ok(())
    }

    // ── Forward operations ─────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.cols() != vb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: (va.rows(), va.cols()),
                rhs: (vb.rows(), vb.cols()),
            });
        }
        let out = va.matmul(vb);
        let req = self.req(a) || self.req(b);
        self.push(out, Op::Matmul(a, b), req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.check_same_shape("add", a, b)?;
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x + y);
        let req = self.req(a) || self.req(b);
        self.push(out, Op::Add(a, b), req)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.check_same_shape("sub", a, b)?;
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x - y);
        let req = self.req(a) || self.req(b);
        self.push(out, Op::Sub(a, b), req)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.check_same_shape("mul", a, b)?;
        let out = self.values[a.0].zip_map(&self.values[b.0], |x, y| x * y);
        let req = self.req(a) || self.req(b);
        self.push(out, Op::Mul(a, b), req)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let out = self.values[a.0].map(|x| x.max(0.0));
        let req = self.req(a);
        self.push(out, Op::Relu(a), req)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let out = self.values[a.0].map(f64::tanh);
        let req = self.req(a);
        self.push(out, Op::Tanh(a), req)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let out = self.values[a.0].map(f64::exp);
        let req = self.req(a);
        self.push(out, Op::Exp(a), req)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        if self.values[a.0].data().iter().any(|&v| v <= 0.0) {
            return Err(AutodiffError::LogDomain);
        }
        let out = self.values[a.0].map(f64::ln);
        let req = self.req(a);
        self.push(out, Op::Log(a), req)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let out = self.values[a.0].map(|x| -x);
        let req = self.req(a);
        self.push(out, Op::Neg(a), req)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        let out = self.values[a.0].map(|x| c * x);
        let req = self.req(a);
        self.push(out, Op::Scale(a, c), req)
    }

    /// Row-wise softmax, stabilized by per-row max subtraction.
    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let out = softmax_rows(&self.values[a.0]);
        let req = self.req(a);
        self.push(out, Op::RowSoftmax(a), req)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let s: f64 = self.values[a.0].data().iter().sum();
        let req = self.req(a);
        self.push(Mat::scalar(s), Op::Sum(a), req)
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let v = &self.values[a.0];
        let s: f64 = v.data().iter().sum();
        let out = Mat::scalar(s / v.len() as f64);
        let req = self.req(a);
        self.push(out, Op::Mean(a), req)
    }

    /// Per-row mean: `r x c` becomes `r x 1`.
    pub fn row_mean(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let v = &self.values[a.0];
        let out = Mat::from_fn(v.rows(), 1, |i, _| {
            v.row(i).iter().sum::<f64>() / v.cols() as f64
        });
        let req = self.req(a);
        self.push(out, Op::RowMean(a), req)
    }

    /// Replicates a `1 x c` row to `n x c`. The explicit stand-in for
    /// broadcasting, used to add biases across a batch.
    pub fn replicate_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId, AutodiffError> {
        let v = &self.values[a.0];
        if v.rows() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "replicate_rows",
                lhs: (v.rows(), v.cols()),
                rhs: (1, v.cols()),
            });
        }
        let row = v.row(0).to_vec();
        let out = Mat::from_fn(n, row.len(), |_, j| row[j]);
        let req = self.req(a);
        self.push(out, Op::ReplicateRows(a), req)
    }

    /// Packs scalar nodes into an `rows x cols` matrix, row-major. The
    /// backward pass scatters each gradient entry to its source scalar.
    pub fn stack_scalars(
        &mut self,
        ids: &[NodeId],
        rows: usize,
        cols: usize,
    ) -> Result<NodeId, AutodiffError> {
        if ids.len() != rows * cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "stack_scalars",
                lhs: (ids.len(), 1),
                rhs: (rows, cols),
            });
        }
        let mut data = Vec::with_capacity(ids.len());
        let mut req = false;
        for &id in ids {
            let v = &self.values[id.0];
            if v.rows() != 1 || v.cols() != 1 {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack_scalars",
                    lhs: (v.rows(), v.cols()),
                    rhs: (1, 1),
                });
            }
            data.push(v.scalar_value());
            req |= self.req(id);
        }
        let out = Mat::from_vec(rows, cols, data).expect("length checked");
        self.push(out, Op::StackScalars(ids.to_vec()), req)
    }

    /// Mean squared error over all entries; gradient flows to `pred` only.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AutodiffError> {
        self.check_same_shape("mse", pred, target)?;
        let (p, t) = (&self.values[pred.0], &self.values[target.0]);
        let n = p.len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let req = self.req(pred);
        self.push(Mat::scalar(s / n), Op::Mse(pred, target), req)
    }

    /// Binary cross-entropy on logits, mean over all entries. Targets must be
    /// exactly 0 or 1. Uses the overflow-safe softplus form.
    pub fn bce_with_logits(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AutodiffError> {
        self.check_same_shape("bce_with_logits", pred, target)?;
        let (p, t) = (&self.values[pred.0], &self.values[target.0]);
        if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(AutodiffError::BceTarget);
        }
        let n = p.len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let req = self.req(pred);
        self.push(Mat::scalar(s / n), Op::BceWithLogits(pred, target), req)
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Back-propagates from a scalar loss node, populating gradients of every
    /// reachable node with `requires_grad`. Gradients accumulate (`+=`) so
    /// shared subgraphs are handled. The graph is finished afterwards; a
    /// second call is rejected.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        if self.finished {
            return Err(AutodiffError::BackwardTwice);
        }
        let v = &self.values[loss.0];
        if v.rows() != 1 || v.cols() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        if matches!(self.ops[loss.0], Op::Leaf) {
            return Err(AutodiffError::EmptyRecord);
        }
        self.finished = true;
        self.grads[loss.0] = Some(Mat::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(gout) = self.grads[i].clone() else {
                continue;
            };
            let op = self.ops[i].clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    if self.req(a) {
                        let d = gout.matmul(&self.values[b.0].transpose());
                        self.accumulate(a, d);
                    }
                    if self.req(b) {
                        let d = self.values[a.0].transpose().matmul(&gout);
                        self.accumulate(b, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.req(a) {
                        self.accumulate(a, gout.clone());
                    }
                    if self.req(b) {
                        self.accumulate(b, gout);
                    }
                }
                Op::Sub(a, b) => {
                    if self.req(a) {
                        self.accumulate(a, gout.clone());
                    }
                    if self.req(b) {
                        self.accumulate(b, gout.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.req(a) {
                        let d = gout.zip_map(&self.values[b.0], |g, y| g * y);
                        self.accumulate(a, d);
                    }
                    if self.req(b) {
                        let d = gout.zip_map(&self.values[a.0], |g, x| g * x);
                        self.accumulate(b, d);
                    }
                }
                Op::Relu(a) => {
                    let d = gout.zip_map(&self.values[a.0], |g, x| if x > 0.0 { g } else { 0.0 });
                    self.accumulate(a, d);
                }
                Op::Tanh(a) => {
                    // uses the stored output: d/dx tanh = 1 - tanh^2
                    let d = gout.zip_map(&self.values[i], |g, y| g * (1.0 - y * y));
                    self.accumulate(a, d);
                }
                Op::Exp(a) => {
                    let d = gout.zip_map(&self.values[i], |g, y| g * y);
                    self.accumulate(a, d);
                }
                Op::Log(a) => {
                    let d = gout.zip_map(&self.values[a.0], |g, x| g / x);
                    self.accumulate(a, d);
                }
                Op::Neg(a) => {
                    self.accumulate(a, gout.map(|x| -x));
                }
                Op::Scale(a, c) => {
                    self.accumulate(a, gout.map(|x| c * x));
                }
                Op::RowSoftmax(a) => {
                    let y = &self.values[i];
                    let mut d = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = gout.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(&p, &g)| p * g).sum();
                        for c in 0..y.cols() {
                            d.set(r, c, yr[c] * (gr[c] - dot));
                        }
                    }
                    self.accumulate(a, d);
                }
                Op::Sum(a) => {
                    let g = gout.scalar_value();
                    let v = &self.values[a.0];
                    self.accumulate(a, Mat::filled(v.rows(), v.cols(), g));
                }
                Op::Mean(a) => {
                    let v = &self.values[a.0];
                    let g = gout.scalar_value() / v.len() as f64;
                    self.accumulate(a, Mat::filled(v.rows(), v.cols(), g));
                }
                Op::RowMean(a) => {
                    let v = &self.values[a.0];
                    let c = v.cols() as f64;
                    let d = Mat::from_fn(v.rows(), v.cols(), |r, _| gout.get(r, 0) / c);
                    self.accumulate(a, d);
                }
                Op::ReplicateRows(a) => {
                    let cols = gout.cols();
                    let d = Mat::from_fn(1, cols, |_, j| {
                        (0..gout.rows()).map(|r| gout.get(r, j)).sum()
                    });
                    self.accumulate(a, d);
                }
                Op::StackScalars(ids) => {
                    for (idx, id) in ids.iter().enumerate() {
                        if self.req(*id) {
                            self.accumulate(*id, Mat::scalar(gout.data()[idx]));
                        }
                    }
                }
                Op::Mse(pred, target) => {
                    let g = gout.scalar_value();
                    let p = &self.values[pred.0];
                    let t = &self.values[target.0];
                    let n = p.len() as f64;
                    let d = p.zip_map(t, |a, b| g * 2.0 * (a - b) / n);
                    self.accumulate(pred, d);
                }
                Op::BceWithLogits(pred, target) => {
                    let g = gout.scalar_value();
                    let p = &self.values[pred.0];
                    let t = &self.values[target.0];
                    let n = p.len() as f64;
                    let d = p.zip_map(t, |x, y| {
                        let sig = 1.0 / (1.0 + (-x).exp());
                        g * (sig - y) / n
                    });
                    self.accumulate(pred, d);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Mat) {
        match &mut self.grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }
}
