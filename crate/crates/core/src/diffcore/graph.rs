//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes only refer
//! to earlier nodes, so the tape is topologically ordered by construction and
//! [`Graph::backward`] is a single reverse sweep. Leaves bound to a
//! [`ParamStore`] entry deliver their gradient into the store's slot for that
//! parameter; slots accumulate until explicitly zeroed.

use std::collections::{HashMap, HashSet};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors with one gradient slot each.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.names.push(name.into());
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Replaces a parameter value. The shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "ParamStore::set_value",
                format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    value.shape(),
                    self.values[id.0].shape()
                ),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn zero_grads(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.grads[id.0].fill(0.0);
        }
    }

    pub fn zero_all_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Simultaneous mutable access to a value and its gradient.
    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor, &Tensor) {
        (&mut self.values[id.0], &self.grads[id.0])
    }

    fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        // Shapes are fixed at registration, so this cannot fail.
        self.grads[id.0]
            .axpy(1.0, g)
            .expect("gradient slot shape equals parameter shape");
    }

    /// Total parameter count over `ids`.
    pub fn numel(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.values[id.0].len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    GatherCols(NodeId, Vec<usize>),
    SelectRows(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Bilinear {
        u: NodeId,
        v: NodeId,
        m: NodeId,
        classes: Vec<usize>,
    },
    RowMatGather {
        z: NodeId,
        w: NodeId,
        rows: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Which parameters a graph differentiates with respect to.
#[derive(Debug, Clone)]
enum Trainable {
    All,
    Only(HashSet<ParamId>),
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, NodeId>,
    trainable: Trainable,
    clamp_hits: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph in which every bound parameter is trainable.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            trainable: Trainable::All,
            clamp_hits: 0,
        }
    }

    /// A graph that only differentiates with respect to `ids`; every other
    /// parameter is bound as a constant.
    pub fn with_trainable(ids: &[ParamId]) -> Self {
        Self {
            trainable: Trainable::Only(ids.iter().copied().collect()),
            ..Self::new()
        }
    }

    /// A graph with no trainable parameters (pure evaluation).
    pub fn frozen() -> Self {
        Self::with_trainable(&[])
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

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    /// Number of entries pushed to a clamp bound so far.
    pub fn clamp_hits(&self) -> usize {
        self.clamp_hits
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            other => inputs(other).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value, "constant")
    }

    /// Binds a stored parameter. Binding the same parameter twice returns
    /// the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        if let Some(&node) = self.bound.get(&id) {
            return Ok(node);
        }
        let trainable = match &self.trainable {
            Trainable::All => true,
            Trainable::Only(set) => set.contains(&id),
        };
        let value = store.value(id).clone();
        let node = if trainable {
            self.push(Op::Param(id), value, "param")?
        } else {
            self.push(Op::Constant, value, "param")?
        };
        self.bound.insert(id, node);
        Ok(node)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(bias));
        let cols = av.cols();
        if bv.len() != cols {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = Tensor::zeros(&[av.rows(), cols]);
        for (orow, arow) in out
            .data_mut()
            .chunks_mut(cols.max(1))
            .zip(av.data().chunks(cols.max(1)))
        {
            for ((o, x), b) in orow.iter_mut().zip(arow).zip(bv.data()) {
                *o = x + b;
            }
        }
        self.push(Op::AddBias(a, bias), out, "add_bias")
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), v, "mul")
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> Result<NodeId> {
        let av = self.value(a);
        if av.len() != c.len() {
            return Err(Error::shape(
                "mul_const",
                format!("{:?} vs {:?}", av.shape(), c.shape()),
            ));
        }
        let data = av.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(av.shape().to_vec(), data)?;
        self.push(Op::MulConst(a, c), v, "mul_const")
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), v, "scale")
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar(a), v, "add_scalar")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, "relu")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, "sigmoid")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, "exp")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, "log")
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v, "square")
    }

    /// Clamps into `[lo, hi]`; clamped entries pass no gradient. The number
    /// of clamped entries is added to [`Graph::clamp_hits`].
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let av = self.value(a);
        let hits = av.data().iter().filter(|&&x| x < lo || x > hi).count();
        let v = av.map(|x| x.clamp(lo, hi));
        self.clamp_hits += hits;
        self.push(Op::Clamp(a, lo, hi), v, "clamp")
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let cols = av.cols();
        let mut out = av.clone().reshape(vec![av.rows(), cols])?;
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            softmax_in_place(row);
        }
        self.push(Op::SoftmaxRows(a), out, "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let cols = av.cols();
        let mut out = av.clone().reshape(vec![av.rows(), cols])?;
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(Op::LogSoftmaxRows(a), out, "log_softmax_rows")
    }

    /// Picks entry `idx[b]` of row `b`, producing a vector.
    pub fn gather_cols(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let av = self.value(a);
        let cols = av.cols();
        if idx.len() != av.rows() || idx.iter().any(|&j| j >= cols) {
            return Err(Error::shape(
                "gather_cols",
                format!("{} indices into {:?}", idx.len(), av.shape()),
            ));
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(b, &j)| av.data()[b * cols + j])
            .collect();
        self.push(Op::GatherCols(a, idx), Tensor::vector(data), "gather_cols")
    }

    /// Builds a matrix whose row `j` is row `idx[j]` of `a`.
    pub fn select_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let av = self.value(a);
        if idx.iter().any(|&i| i >= av.rows()) {
            return Err(Error::shape(
                "select_rows",
                format!("row index out of range for {:?}", av.shape()),
            ));
        }
        let v = av.select_rows(&idx);
        self.push(Op::SelectRows(a, idx), v, "select_rows")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let v = Tensor::matrix(rows, total, data)?;
        self.push(Op::ConcatCols(parts.to_vec()), v, "concat_cols")
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push(Op::Reshape(a), v, "reshape")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v, "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::shape("mean", "empty input"));
        }
        let v = Tensor::scalar(av.sum() / av.len() as f64);
        self.push(Op::Mean(a), v, "mean")
    }

    /// Per-row bilinear score `u_bᵀ M_{classes[b]} v_b`.
    ///
    /// `m` stacks one `dim×dim` matrix per class, shape `(C·dim)×dim`.
    pub fn bilinear(
        &mut self,
        u: NodeId,
        v: NodeId,
        m: NodeId,
        classes: Vec<usize>,
    ) -> Result<NodeId> {
        let (uv, vv, mv) = (self.value(u), self.value(v), self.value(m));
        let dim = uv.cols();
        let b = uv.rows();
        if vv.cols() != dim
            || vv.rows() != b
            || mv.cols() != dim
            || mv.rows() % dim.max(1) != 0
            || classes.len() != b
        {
            return Err(Error::shape(
                "bilinear",
                format!("u {:?}, v {:?}, m {:?}", uv.shape(), vv.shape(), mv.shape()),
            ));
        }
        let num_classes = mv.rows() / dim.max(1);
        if classes.iter().any(|&c| c >= num_classes) {
            return Err(Error::shape("bilinear", "class index out of range"));
        }
        let block = dim * dim;
        let mut out = Vec::with_capacity(b);
        for (row, &c) in classes.iter().enumerate() {
            let mc = &mv.data()[c * block..(c + 1) * block];
            let ur = uv.row(row);
            let vr = vv.row(row);
            let mut s = 0.0;
            for (i, ui) in ur.iter().enumerate() {
                let mrow = &mc[i * dim..(i + 1) * dim];
                let dot: f64 = mrow.iter().zip(vr).map(|(a, b)| a * b).sum();
                s += ui * dot;
            }
            out.push(s);
        }
        self.push(
            Op::Bilinear { u, v, m, classes },
            Tensor::vector(out),
            "bilinear",
        )
    }

    /// Per-row product `z_b · W_{rows[b]}` with `w` stacking one `C×C`
    /// matrix per row group, shape `(R·C)×C`.
    pub fn row_mat_gather(&mut self, z: NodeId, w: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let (zv, wv) = (self.value(z), self.value(w));
        let c = zv.cols();
        if wv.cols() != c || wv.rows() % c.max(1) != 0 || rows.len() != zv.rows() {
            return Err(Error::shape(
                "row_mat_gather",
                format!("z {:?}, w {:?}", zv.shape(), wv.shape()),
            ));
        }
        let groups = wv.rows() / c.max(1);
        if rows.iter().any(|&r| r >= groups) {
            return Err(Error::shape("row_mat_gather", "group index out of range"));
        }
        let mut out = Tensor::zeros(&[zv.rows(), c]);
        for (b, &r) in rows.iter().enumerate() {
            let wr = &wv.data()[r * c * c..(r + 1) * c * c];
            let zr = zv.row(b);
            let orow = &mut out.data_mut()[b * c..(b + 1) * c];
            for (i, zi) in zr.iter().enumerate() {
                for (o, wij) in orow.iter_mut().zip(&wr[i * c..(i + 1) * c]) {
                    *o += zi * wij;
                }
            }
        }
        self.push(Op::RowMatGather { z, w, rows }, out, "row_mat_gather")
    }

    /// Reverse sweep from a scalar `loss`, accumulating parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) {
        let y = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Param(pid) => store.accumulate(*pid, g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let mut da = Tensor::zeros(av.shape());
                    gemm(false, true, m, n, k, g.data(), bv.data(), da.data_mut(), 0.0);
                    accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    gemm(true, false, k, m, n, av.data(), g.data(), db.data_mut(), 0.0);
                    accumulate(grads, *b, db);
                }
            }
            Op::AddBias(a, bias) => {
                if self.wants(*a) {
                    let da = g.clone().reshape(self.value(*a).shape().to_vec()).unwrap();
                    accumulate(grads, *a, da);
                }
                if self.wants(*bias) {
                    let bshape = self.value(*bias).shape().to_vec();
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks(cols.max(1)) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    accumulate(grads, *bias, Tensor::new(bshape, db).unwrap());
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, zip_map(g, self.value(*b), |g, y| g * y));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, zip_map(g, self.value(*a), |g, x| g * x));
                }
            }
            Op::MulConst(a, c) => {
                let mut da = zip_map(g, c, |g, c| g * c);
                da = da.reshape(self.value(*a).shape().to_vec()).unwrap();
                accumulate(grads, *a, da);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                accumulate(
                    grads,
                    *a,
                    zip_map(g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 }),
                );
            }
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, y, |g, s| g * s * (1.0 - s))),
            Op::Exp(a) => accumulate(grads, *a, zip_map(g, y, |g, e| g * e)),
            Op::Log(a) => accumulate(grads, *a, zip_map(g, self.value(*a), |g, x| g / x)),
            Op::Square(a) => {
                accumulate(grads, *a, zip_map(g, self.value(*a), |g, x| 2.0 * g * x));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                accumulate(
                    grads,
                    *a,
                    zip_map(g, self.value(*a), |g, x| if x < lo || x > hi { 0.0 } else { g }),
                );
            }
            Op::SoftmaxRows(a) => {
                let cols = y.cols();
                let mut da = Tensor::zeros(y.shape());
                for ((drow, grow), yrow) in da
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(g.data().chunks(cols))
                    .zip(y.data().chunks(cols))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yi * (gi - dot);
                    }
                }
                let da = da.reshape(self.value(*a).shape().to_vec()).unwrap();
                accumulate(grads, *a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let cols = y.cols();
                let mut da = Tensor::zeros(y.shape());
                for ((drow, grow), yrow) in da
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(g.data().chunks(cols))
                    .zip(y.data().chunks(cols))
                {
                    let gsum: f64 = grow.iter().sum();
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = gi - yi.exp() * gsum;
                    }
                }
                let da = da.reshape(self.value(*a).shape().to_vec()).unwrap();
                accumulate(grads, *a, da);
            }
            Op::GatherCols(a, idx) => {
                let av = self.value(*a);
                let cols = av.cols();
                let mut da = Tensor::zeros(av.shape());
                for (b, (&j, gb)) in idx.iter().zip(g.data()).enumerate() {
                    da.data_mut()[b * cols + j] += gb;
                }
                accumulate(grads, *a, da);
            }
            Op::SelectRows(a, idx) => {
                let av = self.value(*a);
                let cols = av.cols();
                let mut da = Tensor::zeros(av.shape());
                for (j, &i) in idx.iter().enumerate() {
                    let src = &g.data()[j * cols..(j + 1) * cols];
                    for (d, s) in da.data_mut()[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        accumulate(grads, p, Tensor::new(pv.shape().to_vec(), dp).unwrap());
                    }
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                let da = g.clone().reshape(self.value(*a).shape().to_vec()).unwrap();
                accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let gs = g.data()[0];
                accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), gs));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let gs = g.data()[0] / av.len() as f64;
                accumulate(grads, *a, Tensor::filled(av.shape(), gs));
            }
            Op::Bilinear { u, v, m, classes } => {
                let (uv, vv, mv) = (self.value(*u), self.value(*v), self.value(*m));
                let dim = uv.cols();
                let block = dim * dim;
                let mut du = Tensor::zeros(uv.shape());
                let mut dv = Tensor::zeros(vv.shape());
                let mut dm = Tensor::zeros(mv.shape());
                let mut mv_buf = vec![0.0; dim];
                for (row, (&c, &gb)) in classes.iter().zip(g.data()).enumerate() {
                    if gb == 0.0 {
                        continue;
                    }
                    let mc = &mv.data()[c * block..(c + 1) * block];
                    let ur = uv.row(row);
                    let vr = vv.row(row);
                    // M v
                    for (i, out) in mv_buf.iter_mut().enumerate() {
                        *out = mc[i * dim..(i + 1) * dim]
                            .iter()
                            .zip(vr)
                            .map(|(a, b)| a * b)
                            .sum();
                    }
                    for (d, x) in du.row_mut(row).iter_mut().zip(&mv_buf) {
                        *d += gb * x;
                    }
                    // Mᵀ u
                    let dvr = dv.row_mut(row);
                    for (i, ui) in ur.iter().enumerate() {
                        let s = gb * ui;
                        for (d, mij) in dvr.iter_mut().zip(&mc[i * dim..(i + 1) * dim]) {
                            *d += s * mij;
                        }
                    }
                    // u vᵀ
                    let dmc = &mut dm.data_mut()[c * block..(c + 1) * block];
                    for (i, ui) in ur.iter().enumerate() {
                        let s = gb * ui;
                        for (d, vj) in dmc[i * dim..(i + 1) * dim].iter_mut().zip(vr) {
                            *d += s * vj;
                        }
                    }
                }
                if self.wants(*u) {
                    accumulate(grads, *u, du);
                }
                if self.wants(*v) {
                    accumulate(grads, *v, dv);
                }
                if self.wants(*m) {
                    accumulate(grads, *m, dm);
                }
            }
            Op::RowMatGather { z, w, rows } => {
                let (zv, wv) = (self.value(*z), self.value(*w));
                let c = zv.cols();
                let mut dz = Tensor::zeros(zv.shape());
                let mut dw = Tensor::zeros(wv.shape());
                for (b, &r) in rows.iter().enumerate() {
                    let wr = &wv.data()[r * c * c..(r + 1) * c * c];
                    let gb = &g.data()[b * c..(b + 1) * c];
                    let zr = zv.row(b);
                    for i in 0..c {
                        let wrow = &wr[i * c..(i + 1) * c];
                        dz.data_mut()[b * c + i] +=
                            wrow.iter().zip(gb).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let dwr = &mut dw.data_mut()[r * c * c..(r + 1) * c * c];
                    for (i, zi) in zr.iter().enumerate() {
                        for (d, gj) in dwr[i * c..(i + 1) * c].iter_mut().zip(gb) {
                            *d += zi * gj;
                        }
                    }
                }
                if self.wants(*z) {
                    accumulate(grads, *z, dz);
                }
                if self.wants(*w) {
                    accumulate(grads, *w, dw);
                }
            }
        }
    }
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Constant | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::MulConst(a, _)
        | Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Clamp(a, _, _)
        | Op::SoftmaxRows(a)
        | Op::LogSoftmaxRows(a)
        | Op::GatherCols(a, _)
        | Op::SelectRows(a, _)
        | Op::Reshape(a)
        | Op::Sum(a)
        | Op::Mean(a) => vec![*a],
        Op::ConcatCols(parts) => parts.clone(),
        Op::Bilinear { u, v, m, .. } => vec![*u, *v, *m],
        Op::RowMatGather { z, w, .. } => vec![*z, *w],
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("same length")
}

/// Logistic function kept strictly inside (0, 1): past about ±37 the exact
/// value rounds to 1.0, so it stops at the largest double below one.
pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
