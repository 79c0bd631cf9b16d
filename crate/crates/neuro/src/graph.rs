//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! A [`Graph`] records every operation as a node whose parents always have
//! smaller indices, so the tape itself is a topological order. Calling
//! [`Graph::backward`] on a `1 × 1` node walks the tape once in reverse and
//! accumulates (sums) gradients into every node that contributed.
//!
//! ```
//! use featsearch_neuro::{Graph, Mat};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Mat::row_vector(vec![1.0, 2.0]));
//! let y = g.mse(x, &Mat::row_vector(vec![0.0, 0.0])).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.value(y).get(0, 0), 2.5);
//! assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
//! ```

use crate::mat::{gemm, Mat};
use crate::NeuroError;

/// Handle to a node on a [`Graph`]. Only valid for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Concat(NodeId, NodeId),
    SliceCols(NodeId, usize),
    Gather(NodeId, Vec<usize>),
    BroadcastRows(NodeId),
    MeanRows(NodeId),
    Attention {
        keys: Vec<NodeId>,
        query: NodeId,
        weights: Mat,
    },
    WeightedSum {
        items: Vec<NodeId>,
        weights: Mat,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Mat,
    },
    Mse {
        pred: NodeId,
        target: Mat,
    },
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

/// A single-threaded computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Mat>>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> NeuroError {
    NeuroError::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

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

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// Inputs and parameters enter the tape as leaves.
    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient after [`Graph::backward`]; `None` when the node
    /// did not influence the loss.
    pub fn grad(&self, id: NodeId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    /// Attention weights (`batch × keys`) recorded by an attention node.
    pub fn attention_weights(&self, id: NodeId) -> Option<&Mat> {
        match &self.nodes[id.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Softmax probabilities recorded by a cross-entropy node.
    pub fn softmax_probs(&self, id: NodeId) -> Option<&Mat> {
        match &self.nodes[id.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuroError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuroError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let v = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 × c` row to every row of an `r × c` matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NeuroError> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(shape_err("add_bias", va.shape(), vb.shape()));
        }
        let mut v = va.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddBias(a, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuroError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let v = va.zip_map(vb, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| k * x);
        self.push(v, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuroError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(shape_err("concat", va.shape(), vb.shape()));
        }
        let mut v = Mat::zeros(va.rows(), va.cols() + vb.cols());
        for r in 0..va.rows() {
            let row = v.row_mut(r);
            row[..va.cols()].copy_from_slice(va.row(r));
            row[va.cols()..].copy_from_slice(vb.row(r));
        }
        Ok(self.push(v, Op::Concat(a, b)))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, NeuroError> {
        let va = self.value(a);
        if start > end || end > va.cols() {
            return Err(NeuroError::Shape(format!(
                "slice {start}..{end} of {} columns",
                va.cols()
            )));
        }
        let mut v = Mat::zeros(va.rows(), end - start);
        for r in 0..va.rows() {
            v.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Row lookup: output row `i` is row `indices[i]` of `table`.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, NeuroError> {
        let vt = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vt.rows()) {
            return Err(NeuroError::Shape(format!(
                "gather row {bad} from a table of {} rows",
                vt.rows()
            )));
        }
        let mut v = Mat::zeros(indices.len(), vt.cols());
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).copy_from_slice(vt.row(i));
        }
        Ok(self.push(v, Op::Gather(table, indices.to_vec())))
    }

    /// Repeats a `1 × c` row `n` times.
    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId, NeuroError> {
        let va = self.value(a);
        if va.rows() != 1 {
            return Err(NeuroError::Shape(format!(
                "broadcast_rows needs a single row, got {}",
                va.rows()
            )));
        }
        let mut v = Mat::zeros(n, va.cols());
        for r in 0..n {
            v.row_mut(r).copy_from_slice(va.data());
        }
        Ok(self.push(v, Op::BroadcastRows(a)))
    }

    /// Mean over rows (axis 0), giving `1 × c`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    /// Dot-product attention. `keys[t]` is `batch × d` and holds position
    /// `t` of every sequence; `query` is `batch × d`. `mask`, when given, is
    /// `batch × keys.len()` with zeros at positions that must be ignored.
    /// Returns the `batch × d` context: the softmax(key·query)-weighted sum of
    /// the keys. A row with every position masked gets a zero context.
    pub fn attention(
        &mut self,
        keys: &[NodeId],
        query: NodeId,
        mask: Option<&Mat>,
    ) -> Result<NodeId, NeuroError> {
        let q = self.value(query);
        let (batch, d) = q.shape();
        for &k in keys {
            if self.value(k).shape() != (batch, d) {
                return Err(shape_err("attention key", self.value(k).shape(), (batch, d)));
            }
        }
        if let Some(m) = mask {
            if m.shape() != (batch, keys.len()) {
                return Err(shape_err("attention mask", m.shape(), (batch, keys.len())));
            }
        }
        let mut weights = Mat::zeros(batch, keys.len());
        let mut context = Mat::zeros(batch, d);
        let mut scores = vec![0.0; keys.len()];
        for b in 0..batch {
            let qb = q.row(b);
            let mut max = f64::NEG_INFINITY;
            for (t, &k) in keys.iter().enumerate() {
                let keep = mask.is_none_or(|m| m.get(b, t) != 0.0);
                scores[t] = if keep {
                    dot(self.value(k).row(b), qb)
                } else {
                    f64::NEG_INFINITY
                };
                max = max.max(scores[t]);
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = if s.is_finite() { (*s - max).exp() } else { 0.0 };
                total += *s;
            }
            for (t, &k) in keys.iter().enumerate() {
                let a = scores[t] / total;
                weights.set(b, t, a);
                if a != 0.0 {
                    for (c, kv) in context.row_mut(b).iter_mut().zip(self.value(k).row(b)) {
                        *c += a * kv;
                    }
                }
            }
        }
        Ok(self.push(
            context,
            Op::Attention {
                keys: keys.to_vec(),
                query,
                weights,
            },
        ))
    }

    /// `out[b] = Σ_t weights[b, t] · items[t][b]` with constant weights.
    /// Used for masked mean pooling over time steps.
    pub fn weighted_sum(&mut self, items: &[NodeId], weights: &Mat) -> Result<NodeId, NeuroError> {
        let first = items
            .first()
            .ok_or_else(|| NeuroError::Shape("weighted_sum of nothing".into()))?;
        let shape = self.value(*first).shape();
        if weights.shape() != (shape.0, items.len()) {
            return Err(shape_err("weighted_sum weights", weights.shape(), (shape.0, items.len())));
        }
        let mut v = Mat::zeros(shape.0, shape.1);
        for (t, &it) in items.iter().enumerate() {
            let vi = self.value(it);
            if vi.shape() != shape {
                return Err(shape_err("weighted_sum item", vi.shape(), shape));
            }
            for b in 0..shape.0 {
                let w = weights.get(b, t);
                if w != 0.0 {
                    for (o, x) in v.row_mut(b).iter_mut().zip(vi.row(b)) {
                        *o += w * x;
                    }
                }
            }
        }
        Ok(self.push(
            v,
            Op::WeightedSum {
                items: items.to_vec(),
                weights: weights.clone(),
            },
        ))
    }

    /// `Σ_b weights[b] · −log softmax(logits[b])[targets[b]]` as a `1 × 1` node.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<NodeId, NeuroError> {
        let vl = self.value(logits);
        if targets.len() != vl.rows() || weights.len() != vl.rows() {
            return Err(NeuroError::Shape(format!(
                "cross entropy over {} rows with {} targets and {} weights",
                vl.rows(),
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vl.cols()) {
            return Err(NeuroError::Shape(format!(
                "target class {bad} out of {} classes",
                vl.cols()
            )));
        }
        let probs = softmax_rows(vl);
        let mut loss = 0.0;
        for (b, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w != 0.0 {
                loss -= w * log_softmax_at(vl.row(b), t);
            }
        }
        Ok(self.push(
            Mat::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error against a constant target, as a `1 × 1` node.
    pub fn mse(&mut self, pred: NodeId, target: &Mat) -> Result<NodeId, NeuroError> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return Err(shape_err("mse", vp.shape(), target.shape()));
        }
        let n = vp.len().max(1) as f64;
        let loss = vp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Mat::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Back-propagates from a scalar node, replacing any previous gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NeuroError> {
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err("backward root", self.value(loss).shape(), (1, 1)));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &dy);
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn acc(&mut self, id: NodeId) -> &mut Mat {
        let (r, c) = self.nodes[id.0].value.shape();
        self.grads[id.0].get_or_insert_with(|| Mat::zeros(r, c))
    }

    /// Adds an owned gradient contribution, reusing it as the buffer when
    /// the node has none yet.
    fn accumulate(&mut self, id: NodeId, g: Mat) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_scaled(&g, 1.0),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, dy: &Mat) {
        // The op is moved out so parent values and grads can be borrowed freely.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let mut ga = self.take_acc(a);
                gemm(dy, false, &self.nodes[b.0].value, true, &mut ga, 1.0);
                self.grads[a.0] = Some(ga);
                let mut gb = self.take_acc(b);
                gemm(&self.nodes[a.0].value, true, dy, false, &mut gb, 1.0);
                self.grads[b.0] = Some(gb);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, dy.clone());
                self.accumulate(*b, dy.clone());
            }
            Op::AddBias(a, bias) => {
                self.accumulate(*a, dy.clone());
                let gb = self.acc(*bias);
                for r in 0..dy.rows() {
                    for (g, d) in gb.data_mut().iter_mut().zip(dy.row(r)) {
                        *g += d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let ga = dy.zip_map(self.value(*b), |d, y| d * y);
                let gb = dy.zip_map(self.value(*a), |d, x| d * x);
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Scale(a, k) => self.accumulate(*a, dy.map(|d| d * k)),
            Op::Tanh(a) => {
                let g = dy.zip_map(&self.nodes[i].value, |d, y| d * (1.0 - y * y));
                self.accumulate(*a, g);
            }
            Op::Sigmoid(a) => {
                let g = dy.zip_map(&self.nodes[i].value, |d, y| d * y * (1.0 - y));
                self.accumulate(*a, g);
            }
            Op::Relu(a) => {
                let g = dy.zip_map(self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 });
                self.accumulate(*a, g);
            }
            Op::Concat(a, b) => {
                let split = self.value(*a).cols();
                let ga = self.acc(*a);
                for r in 0..dy.rows() {
                    for (g, d) in ga.row_mut(r).iter_mut().zip(&dy.row(r)[..split]) {
                        *g += d;
                    }
                }
                let gb = self.acc(*b);
                for r in 0..dy.rows() {
                    for (g, d) in gb.row_mut(r).iter_mut().zip(&dy.row(r)[split..]) {
                        *g += d;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let ga = self.acc(*a);
                for r in 0..dy.rows() {
                    for (g, d) in ga.row_mut(r)[*start..].iter_mut().zip(dy.row(r)) {
                        *g += d;
                    }
                }
            }
            Op::Gather(table, indices) => {
                let gt = self.acc(*table);
                for (r, &idx) in indices.iter().enumerate() {
                    for (g, d) in gt.row_mut(idx).iter_mut().zip(dy.row(r)) {
                        *g += d;
                    }
                }
            }
            Op::BroadcastRows(a) => {
                let ga = self.acc(*a);
                for r in 0..dy.rows() {
                    for (g, d) in ga.data_mut().iter_mut().zip(dy.row(r)) {
                        *g += d;
                    }
                }
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).rows().max(1) as f64;
                let ga = self.acc(*a);
                for r in 0..ga.rows() {
                    for (g, d) in ga.row_mut(r).iter_mut().zip(dy.data()) {
                        *g += d / n;
                    }
                }
            }
            Op::Attention {
                keys,
                query,
                weights,
            } => self.attention_backward(keys, *query, weights, dy),
            Op::WeightedSum { items, weights } => {
                for (t, &it) in items.iter().enumerate() {
                    let gi = self.acc(it);
                    for b in 0..dy.rows() {
                        let w = weights.get(b, t);
                        if w != 0.0 {
                            for (g, d) in gi.row_mut(b).iter_mut().zip(dy.row(b)) {
                                *g += w * d;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let scale = dy.get(0, 0);
                let gl = self.acc(*logits);
                for (b, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (c, (g, p)) in gl.row_mut(b).iter_mut().zip(probs.row(b)).enumerate() {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        *g += scale * w * (p - onehot);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let scale = dy.get(0, 0) * 2.0 / target.len().max(1) as f64;
                let g = self.value(*pred).zip_map(target, |p, t| scale * (p - t));
                self.acc(*pred).add_scaled(&g, 1.0);
            }
        }
        self.nodes[i].op = op;
    }

    fn take_acc(&mut self, id: NodeId) -> Mat {
        let (r, c) = self.nodes[id.0].value.shape();
        self.grads[id.0].take().unwrap_or_else(|| Mat::zeros(r, c))
    }

    fn attention_backward(&mut self, keys: &[NodeId], query: NodeId, weights: &Mat, dy: &Mat) {
        let (batch, d) = dy.shape();
        // ds[b, t]: gradient of the pre-softmax score of key t in row b
        let mut ds = Mat::zeros(batch, keys.len());
        let mut dq = Mat::zeros(batch, d);
        let mut da = vec![0.0; keys.len()];
        for b in 0..batch {
            let dc = dy.row(b);
            let mut mean = 0.0;
            for (t, &k) in keys.iter().enumerate() {
                da[t] = dot(dc, self.value(k).row(b));
                mean += weights.get(b, t) * da[t];
            }
            for (t, &k) in keys.iter().enumerate() {
                let a = weights.get(b, t);
                if a == 0.0 {
                    continue;
                }
                let s = a * (da[t] - mean);
                ds.set(b, t, s);
                for (q, kv) in dq.row_mut(b).iter_mut().zip(self.value(k).row(b)) {
                    *q += s * kv;
                }
            }
        }
        for (t, &k) in keys.iter().enumerate() {
            let mut gk = self.take_acc(k);
            let q = self.value(query);
            for b in 0..batch {
                let a = weights.get(b, t);
                if a == 0.0 {
                    continue;
                }
                let s = ds.get(b, t);
                for ((g, dc), qv) in gk.row_mut(b).iter_mut().zip(dy.row(b)).zip(q.row(b)) {
                    *g += a * dc + s * qv;
                }
            }
            self.grads[k.0] = Some(gk);
        }
        self.accumulate(query, dq);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// `log softmax(row)[index]`, computed stably.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[index] - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let mut g = Graph::new();
        let l = g.leaf(Mat::row_vector(vec![0.0, 0.0]));
        let ce = g.softmax_cross_entropy(l, &[0], &[1.0]).unwrap();
        assert!((g.value(ce).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let mut g = Graph::new();
        let p = g.leaf(Mat::row_vector(vec![1.0, 2.0]));
        let m = g.mse(p, &Mat::row_vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(g.value(m).get(0, 0), 0.0);
    }

    #[test]
    fn shape_mismatch_is_a_construction_error() {
        let mut g = Graph::new();
        let a = g.leaf(Mat::zeros(2, 3));
        let b = g.leaf(Mat::zeros(2, 3));
        assert!(g.matmul(a, b).is_err());
        assert!(g.add_bias(a, b).is_err());
        assert!(g.slice_cols(a, 2, 4).is_err());
        assert!(g.gather(a, &[5]).is_err());
        let c = g.leaf(Mat::zeros(3, 3));
        assert!(g.add(a, c).is_err());
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn uniform_keys_give_uniform_attention() {
        let mut g = Graph::new();
        let row = vec![0.3, -0.2, 0.7];
        let keys: Vec<_> = (0..4).map(|_| g.leaf(Mat::row_vector(row.clone()))).collect();
        let q = g.leaf(Mat::row_vector(vec![1.0, 2.0, -1.0]));
        let ctx = g.attention(&keys, q, None).unwrap();
        let w = g.attention_weights(ctx).unwrap();
        for t in 0..4 {
            assert!((w.get(0, t) - 0.25).abs() < 1e-15);
        }
        for (c, r) in g.value(ctx).data().iter().zip(&row) {
            assert!((c - r).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_attention_ignores_masked_positions() {
        let mut g = Graph::new();
        let k0 = g.leaf(Mat::row_vector(vec![1.0, 0.0]));
        let k1 = g.leaf(Mat::row_vector(vec![0.0, 100.0]));
        let q = g.leaf(Mat::row_vector(vec![1.0, 1.0]));
        let mask = Mat::row_vector(vec![1.0, 0.0]);
        let ctx = g.attention(&[k0, k1], q, Some(&mask)).unwrap();
        assert_eq!(g.value(ctx).data(), &[1.0, 0.0]);
    }

    #[test]
    fn diamond_graph_sums_gradients() {
        // y = (x * x) + x at x = 3 -> dy/dx = 2x + 1 = 7
        let mut g = Graph::new();
        let x = g.leaf(Mat::scalar(3.0));
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().get(0, 0), 7.0);
    }

    #[test]
    fn inputs_are_not_mutated() {
        let mut g = Graph::new();
        let a = g.leaf(Mat::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
        let b = g.leaf(Mat::from_rows(&[[0.5, 1.0], [2.0, -1.0]]).unwrap());
        let before = (g.value(a).clone(), g.value(b).clone());
        let m = g.matmul(a, b).unwrap();
        let t = g.tanh(m);
        let s = g.mean_rows(t);
        let s = g.mse(s, &Mat::zeros(1, 2)).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.value(a), &before.0);
        assert_eq!(g.value(b), &before.1);
    }
}
