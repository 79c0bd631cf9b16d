//! Dense and LSTM building blocks expressed on the tape.
//!
//! Parameters follow a naming scheme so a model can be assembled from a
//! single [`ParamStore`]: a dense layer `p` owns `p.w` (`in × out`) and `p.b`
//! (`1 × out`); an LSTM cell `p` owns `p.w` (`(in + hidden) × 4·hidden`) and
//! `p.b` (`1 × 4·hidden`) with gate blocks ordered input, forget, candidate,
//! output.

use rand::Rng;

use crate::graph::{Graph, NodeId};
use crate::mat::Mat;
use crate::params::{Bound, ParamStore};
use crate::NeuroError;

pub fn init_dense(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut impl Rng) {
    store.init_uniform(format!("{prefix}.w"), input, output, rng);
    store.insert(format!("{prefix}.b"), Mat::zeros(1, output));
}

/// Forget-gate biases start at one.
pub fn init_lstm(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) {
    store.init_uniform(format!("{prefix}.w"), input + hidden, 4 * hidden, rng);
    let mut b = Mat::zeros(1, 4 * hidden);
    for j in hidden..2 * hidden {
        b.set(0, j, 1.0);
    }
    store.insert(format!("{prefix}.b"), b);
}

pub fn dense(g: &mut Graph, p: &Bound, prefix: &str, x: NodeId) -> Result<NodeId, NeuroError> {
    let xw = g.matmul(x, p.id(&format!("{prefix}.w")))?;
    g.add_bias(xw, p.id(&format!("{prefix}.b")))
}

/// One LSTM step on explicit weight/bias nodes; returns `(h, c)`.
pub fn lstm_step(
    g: &mut Graph,
    w: NodeId,
    b: NodeId,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), NeuroError> {
    let hidden = g.value(h_prev).cols();
    if g.value(w).cols() != 4 * hidden {
        return Err(NeuroError::Shape(format!(
            "lstm weight has {} columns, hidden size {hidden}",
            g.value(w).cols()
        )));
    }
    let xh = g.concat(x, h_prev)?;
    let z = g.matmul(xh, w)?;
    let z = g.add_bias(z, b)?;
    let i = g.slice_cols(z, 0, hidden)?;
    let f = g.slice_cols(z, hidden, 2 * hidden)?;
    let cand = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let o = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let squashed = g.tanh(c);
    let h = g.mul(o, squashed)?;
    Ok((h, c))
}

/// [`lstm_step`] with the weights looked up by prefix.
pub fn lstm(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), NeuroError> {
    lstm_step(
        g,
        p.id(&format!("{prefix}.w")),
        p.id(&format!("{prefix}.b")),
        x,
        h_prev,
        c_prev,
    )
}
