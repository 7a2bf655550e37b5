//! Define-by-run reverse-mode automatic differentiation.
//!
//! A `Tape` records tensor operations as they execute; `backward` walks the
//! recording in reverse creation order (a topological order by construction)
//! and accumulates gradients deterministically, visiting each node once.

use crate::error::{IclError, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    Embedding(NodeId, Vec<usize>),
    PickPerRow(NodeId, Vec<usize>),
    AttnScores(NodeId, NodeId, usize),
    AttnContext(NodeId, NodeId, usize),
    SumAll(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Recorded operation graph with per-node cached values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn record(&mut self, op: Op, value: Tensor, needs: bool, name: &'static str) -> Result<NodeId> {
        value.check_finite(name)?;
        Ok(self.push(op, value, needs))
    }

    /// Differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiable input (data, masks).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.record(Op::Matmul(a, b), v, needs, "matmul")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.record(Op::Add(a, b), v, needs, "add")
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let v = tensor::add_row(self.value(a), self.value(row))?;
        let needs = self.needs(a) || self.needs(row);
        self.record(Op::AddRow(a, row), v, needs, "add_row")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.record(Op::Mul(a, b), v, needs, "mul")
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let v = tensor::scale(self.value(a), k);
        let needs = self.needs(a);
        self.record(Op::Scale(a, k), v, needs, "scale")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::tanh(self.value(a));
        let needs = self.needs(a);
        self.record(Op::Tanh(a), v, needs, "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::sigmoid(self.value(a));
        let needs = self.needs(a);
        self.record(Op::Sigmoid(a), v, needs, "sigmoid")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::log(self.value(a));
        let needs = self.needs(a);
        self.record(Op::Log(a), v, needs, "log")
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::softmax_rows(self.value(a))?;
        let needs = self.needs(a);
        self.record(Op::SoftmaxRows(a), v, needs, "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::log_softmax_rows(self.value(a))?;
        let needs = self.needs(a);
        self.record(Op::LogSoftmaxRows(a), v, needs, "log_softmax_rows")
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat_cols(&tensors)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.record(Op::ConcatCols(parts.to_vec()), v, needs, "concat")
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = tensor::slice_cols(self.value(a), start, end)?;
        let needs = self.needs(a);
        self.record(Op::SliceCols(a, start, end), v, needs, "slice")
    }

    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let v = tensor::embedding_lookup(self.value(table), ids)?;
        let needs = self.needs(table);
        self.record(Op::Embedding(table, ids.to_vec()), v, needs, "embedding_lookup")
    }

    pub fn pick_per_row(&mut self, a: NodeId, ids: &[usize]) -> Result<NodeId> {
        let v = tensor::pick_per_row(self.value(a), ids)?;
        let needs = self.needs(a);
        self.record(Op::PickPerRow(a, ids.to_vec()), v, needs, "pick_per_row")
    }

    pub fn attn_scores(&mut self, query: NodeId, keys: NodeId, t: usize) -> Result<NodeId> {
        let v = tensor::attn_scores(self.value(query), self.value(keys), t)?;
        let needs = self.needs(query) || self.needs(keys);
        self.record(Op::AttnScores(query, keys, t), v, needs, "attn_scores")
    }

    pub fn attn_context(&mut self, weights: NodeId, values: NodeId, t: usize) -> Result<NodeId> {
        let v = tensor::attn_context(self.value(weights), self.value(values), t)?;
        let needs = self.needs(weights) || self.needs(values);
        self.record(Op::AttnContext(weights, values, t), v, needs, "attn_context")
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::sum_all(self.value(a));
        let needs = self.needs(a);
        self.record(Op::SumAll(a), v, needs, "sum_all")
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients;
    /// nodes off the loss path (or marked constant) have none.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(IclError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_inputs(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut bump = |id: NodeId, contribution: &dyn Fn(&mut Tensor)| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            let slot = &mut grads[id.0];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(self.nodes[id.0].value.shape().to_vec()));
            }
            contribution(slot.as_mut().unwrap());
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2("matmul").unwrap();
                let (_, n) = bv.dims2("matmul").unwrap();
                bump(*a, &|da: &mut Tensor| {
                    // dA[i,k] += sum_j G[i,j] * B[k,j]
                    for i in 0..m {
                        let g_row = &g.data()[i * n..(i + 1) * n];
                        let da_row = &mut da.data_mut()[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let b_row = &bv.data()[kk * n..(kk + 1) * n];
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g_row[j] * b_row[j];
                            }
                            da_row[kk] += acc;
                        }
                    }
                });
                bump(*b, &|db: &mut Tensor| {
                    // dB[k,j] += sum_i A[i,k] * G[i,j]
                    for i in 0..m {
                        let a_row = &av.data()[i * k..(i + 1) * k];
                        let g_row = &g.data()[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let a_ik = a_row[kk];
                            let db_row = &mut db.data_mut()[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                db_row[j] += a_ik * g_row[j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    bump(id, &|d: &mut Tensor| {
                        for (x, y) in d.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    });
                }
            }
            Op::AddRow(a, row) => {
                bump(*a, &|d: &mut Tensor| {
                    for (x, y) in d.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
                let (m, n) = node.value.dims2("add_row").unwrap();
                bump(*row, &|d: &mut Tensor| {
                    for i in 0..m {
                        for j in 0..n {
                            d.data_mut()[j] += g.data()[i * n + j];
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                bump(*a, &|d: &mut Tensor| {
                    for ((x, y), z) in d.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *x += y * z;
                    }
                });
                bump(*b, &|d: &mut Tensor| {
                    for ((x, y), z) in d.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale(a, k) => {
                let k = *k;
                bump(*a, &|d: &mut Tensor| {
                    for (x, y) in d.data_mut().iter_mut().zip(g.data()) {
                        *x += k * y;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                bump(*a, &|d: &mut Tensor| {
                    for ((x, gy), yv) in d.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gy * (1.0 - yv * yv);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                bump(*a, &|d: &mut Tensor| {
                    for ((x, gy), yv) in d.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gy * yv * (1.0 - yv);
                    }
                });
            }
            Op::Log(a) => {
                let xv = self.value(*a);
                bump(*a, &|d: &mut Tensor| {
                    for ((x, gy), inp) in d.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *x += gy / inp;
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (m, n) = y.dims2("softmax_rows").unwrap();
                bump(*a, &|d: &mut Tensor| {
                    for i in 0..m {
                        let y_row = &y.data()[i * n..(i + 1) * n];
                        let g_row = &g.data()[i * n..(i + 1) * n];
                        let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                        let d_row = &mut d.data_mut()[i * n..(i + 1) * n];
                        for j in 0..n {
                            d_row[j] += y_row[j] * (g_row[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let (m, n) = y.dims2("log_softmax_rows").unwrap();
                bump(*a, &|d: &mut Tensor| {
                    for i in 0..m {
                        let y_row = &y.data()[i * n..(i + 1) * n];
                        let g_row = &g.data()[i * n..(i + 1) * n];
                        let gsum: f64 = g_row.iter().sum();
                        let d_row = &mut d.data_mut()[i * n..(i + 1) * n];
                        for j in 0..n {
                            d_row[j] += g_row[j] - y_row[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2("concat").unwrap();
                let mut off = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2("concat").unwrap();
                    let start = off;
                    bump(p, &|d: &mut Tensor| {
                        for i in 0..m {
                            for j in 0..w {
                                d.data_mut()[i * w + j] += g.data()[i * total + start + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(a, start, _end) => {
                let (m, w) = node.value.dims2("slice").unwrap();
                let (_, n) = self.value(*a).dims2("slice").unwrap();
                let start = *start;
                bump(*a, &|d: &mut Tensor| {
                    for i in 0..m {
                        for j in 0..w {
                            d.data_mut()[i * n + start + j] += g.data()[i * w + j];
                        }
                    }
                });
            }
            Op::Embedding(table, ids) => {
                let (_, dim) = node.value.dims2("embedding_lookup").unwrap();
                bump(*table, &|d: &mut Tensor| {
                    for (i, &id) in ids.iter().enumerate() {
                        let g_row = &g.data()[i * dim..(i + 1) * dim];
                        let d_row = &mut d.data_mut()[id * dim..(id + 1) * dim];
                        for j in 0..dim {
                            d_row[j] += g_row[j];
                        }
                    }
                });
            }
            Op::PickPerRow(a, ids) => {
                let (_, n) = self.value(*a).dims2("pick_per_row").unwrap();
                bump(*a, &|d: &mut Tensor| {
                    for (i, &id) in ids.iter().enumerate() {
                        d.data_mut()[i * n + id] += g.data()[i];
                    }
                });
            }
            Op::AttnScores(query, keys, t) => {
                let qv = self.value(*query);
                let kv = self.value(*keys);
                let (b, h) = qv.dims2("attn_scores").unwrap();
                let t = *t;
                bump(*query, &|d: &mut Tensor| {
                    for i in 0..b {
                        let g_row = &g.data()[i * t..(i + 1) * t];
                        let k_row = &kv.data()[i * t * h..(i + 1) * t * h];
                        let d_row = &mut d.data_mut()[i * h..(i + 1) * h];
                        for s in 0..t {
                            let gs = g_row[s];
                            let block = &k_row[s * h..(s + 1) * h];
                            for j in 0..h {
                                d_row[j] += gs * block[j];
                            }
                        }
                    }
                });
                bump(*keys, &|d: &mut Tensor| {
                    for i in 0..b {
                        let g_row = &g.data()[i * t..(i + 1) * t];
                        let q_row = &qv.data()[i * h..(i + 1) * h];
                        let d_row = &mut d.data_mut()[i * t * h..(i + 1) * t * h];
                        for s in 0..t {
                            let gs = g_row[s];
                            let block = &mut d_row[s * h..(s + 1) * h];
                            for j in 0..h {
                                block[j] += gs * q_row[j];
                            }
                        }
                    }
                });
            }
            Op::AttnContext(weights, values, t) => {
                let wv = self.value(*weights);
                let vv = self.value(*values);
                let (b, h) = node.value.dims2("attn_context").unwrap();
                let t = *t;
                bump(*weights, &|d: &mut Tensor| {
                    for i in 0..b {
                        let g_row = &g.data()[i * h..(i + 1) * h];
                        let v_row = &vv.data()[i * t * h..(i + 1) * t * h];
                        let d_row = &mut d.data_mut()[i * t..(i + 1) * t];
                        for s in 0..t {
                            let block = &v_row[s * h..(s + 1) * h];
                            let mut acc = 0.0;
                            for j in 0..h {
                                acc += g_row[j] * block[j];
                            }
                            d_row[s] += acc;
                        }
                    }
                });
                bump(*values, &|d: &mut Tensor| {
                    for i in 0..b {
                        let g_row = &g.data()[i * h..(i + 1) * h];
                        let w_row = &wv.data()[i * t..(i + 1) * t];
                        let d_row = &mut d.data_mut()[i * t * h..(i + 1) * t * h];
                        for s in 0..t {
                            let ws = w_row[s];
                            let block = &mut d_row[s * h..(s + 1) * h];
                            for j in 0..h {
                                block[j] += ws * g_row[j];
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let gv = g.item();
                bump(*a, &|d: &mut Tensor| {
                    for x in d.data_mut() {
                        *x += gv;
                    }
                });
            }
        }
    }
}

/// Per-node gradients from a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

/// Relative error used by the gradient checker:
/// `|ad - fd| / max(1e-12, |ad| + |fd|)`.
pub fn rel_error(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / (1e-12f64).max(ad.abs() + fd.abs())
}

/// Central-difference check of the tape gradients of `f` at `params`.
/// Returns the maximum relative error over all parameter coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(IclError::InvalidArgument(
            "grad_check eps must be positive".to_string(),
        ));
    }
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| t.leaf(p.clone())).collect();
        let l = f(&mut t, &ids)?;
        Ok(t.value(l).item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel: f64 = 0.0;
    for pi in 0..params.len() {
        for ci in 0..params[pi].len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[ci] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let ad = grads.get(ids[pi]).map(|t| t.data()[ci]).unwrap_or(0.0);
            max_rel = max_rel.max(rel_error(ad, fd));
        }
    }
    Ok(max_rel)
}
