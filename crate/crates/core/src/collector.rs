//! Reinforcement-learning collection of (program, score) records.
//!
//! Three cascading agents pick a head column, an operation and (for binary
//! operations) a tail column. Each agent is a value network that scores a
//! candidate by reading `state ⊕ candidate encoding`:
//!
//! | agent | input row                                               | width |
//! |-------|---------------------------------------------------------|-------|
//! | head  | `describe(X) ⊕ Rep(column)`                             | 98    |
//! | op    | `describe(X) ⊕ Rep(head) ⊕ onehot(op)`                  | 114   |
//! | tail  | `describe(X) ⊕ Rep(head) ⊕ onehot(op) ⊕ Rep(column)`    | 163   |
//!
//! so the number of actions can grow with the feature count. Inputs pass
//! through `sign(v)·ln(1+|v|)` because raw statistics (row counts, extreme
//! values) span many orders of magnitude.
//!
//! One epoch is one episode starting from the original features. Every kept
//! step appends a column and emits a record holding the episode's
//! compositions so far, expressed over original feature ids.

use featsearch_neuro::layers::{dense, init_dense};
use featsearch_neuro::{Adam, Bound, Graph, Mat, NodeId, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{describe, describe_columns, Dataset, FeatureMatrix, STATE_WIDTH};
use crate::downstream::{train_eval, EvalConfig, Score};
use crate::error::{Error, Result};
use crate::expr::{infix_to_postfix, Expr};
use crate::opset::{apply_binary, apply_unary, Mode, Operation};
use crate::record::{Provenance, TransformationRecord};

pub const HEAD_INPUT: usize = 2 * STATE_WIDTH;
pub const OP_INPUT: usize = 2 * STATE_WIDTH + Operation::COUNT;
pub const TAIL_INPUT: usize = OP_INPUT + STATE_WIDTH;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectorMode {
    Rl,
    Random,
}

impl std::str::FromStr for CollectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(CollectorMode::Rl),
            "random" => Ok(CollectorMode::Random),
            _ => Err(Error::Input(format!("unknown collector mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectorConfig {
    pub epochs: usize,
    pub steps: usize,
    pub mode: CollectorMode,
    pub seed: u64,
    pub hidden: usize,
    pub lr: f64,
    /// Discount λ of the Bellman target.
    pub gamma: f64,
    pub batch_size: usize,
    /// Replay minibatch updates per agent after each step.
    pub updates_per_step: usize,
    pub replay_capacity: usize,
    /// Gradient updates between target-network syncs.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Reward for a step whose column is discarded.
    pub penalty: f64,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self {
            epochs: 512,
            steps: 6,
            mode: CollectorMode::Rl,
            seed: 0,
            hidden: 100,
            lr: 1e-3,
            gamma: 0.95,
            batch_size: 32,
            updates_per_step: 4,
            replay_capacity: 4096,
            target_sync: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            penalty: -0.05,
        }
    }
}

impl CollectorConfig {
    /// Linear anneal from `epsilon_start` to `epsilon_end` over the first
    /// half of the epochs; always 1 in random mode.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        if self.mode == CollectorMode::Random {
            return 1.0;
        }
        let half = (self.epochs as f64 / 2.0).max(1.0);
        let t = (epoch as f64 / half).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }

    pub fn provenance(&self) -> Provenance {
        match self.mode {
            CollectorMode::Rl => Provenance::Rl,
            CollectorMode::Random => Provenance::Random,
        }
    }
}

pub fn squash(v: f64) -> f64 {
    if v.is_finite() {
        v.signum() * v.abs().ln_1p()
    } else {
        0.0
    }
}

fn squashed(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(squash).collect()
}

/// The 49-wide encoding of a single column.
pub fn rep(col: &[f64]) -> Vec<f64> {
    describe_columns(&[col])
}

/// Anything that assigns a value to each candidate row.
pub trait ActionValues {
    fn action_values(&self, candidates: &Mat) -> Vec<f64>;
}

/// Every action valued equally (argmax picks the first).
pub struct Indifferent;

impl ActionValues for Indifferent {
    fn action_values(&self, candidates: &Mat) -> Vec<f64> {
        vec![0.0; candidates.rows()]
    }
}

/// Fixed values by candidate index, for hand-built policies.
pub struct FixedValues(pub Vec<f64>);

impl ActionValues for FixedValues {
    fn action_values(&self, candidates: &Mat) -> Vec<f64> {
        (0..candidates.rows()).map(|i| self.0.get(i).copied().unwrap_or(f64::NEG_INFINITY)).collect()
    }
}

/// One stored experience: the chosen input row, its reward, and the
/// candidate rows of the same agent's next decision (`None` if terminal).
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub input: Vec<f64>,
    pub reward: f64,
    pub next: Option<Mat>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            capacity: capacity.max(1),
            cursor: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Two-hidden-layer ReLU network `input → hidden → hidden → 1` with a
/// lagged target copy.
#[derive(Clone, Debug)]
pub struct QNetwork {
    online: ParamStore,
    target: ParamStore,
    adam: Adam,
    sync_every: u64,
    updates: u64,
}

fn mlp(g: &mut Graph, p: &Bound, x: NodeId) -> NodeId {
    let h = dense(g, p, "l1", x).expect("input width checked by caller");
    let h = g.relu(h);
    let h = dense(g, p, "l2", h).expect("layer widths fixed at init");
    let h = g.relu(h);
    dense(g, p, "out", h).expect("layer widths fixed at init")
}

fn forward(params: &ParamStore, x: &Mat) -> Vec<f64> {
    if x.rows() == 0 {
        return Vec::new();
    }
    let mut g = Graph::new();
    let xi = g.leaf(x.clone());
    let p = params.bind(&mut g);
    let out = mlp(&mut g, &p, xi);
    g.value(out).data().to_vec()
}

impl QNetwork {
    pub fn new(input: usize, hidden: usize, lr: f64, sync_every: u64, rng: &mut impl Rng) -> Self {
        let mut online = ParamStore::new();
        init_dense(&mut online, "l1", input, hidden, rng);
        init_dense(&mut online, "l2", hidden, hidden, rng);
        init_dense(&mut online, "out", hidden, 1, rng);
        Self {
            target: online.clone(),
            online,
            adam: Adam::new(lr),
            sync_every: sync_every.max(1),
            updates: 0,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.online
    }

    /// Mutable online parameters; call [`QNetwork::sync_target`] afterwards
    /// if the target should follow.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.online
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    pub fn target_values(&self, candidates: &Mat) -> Vec<f64> {
        forward(&self.target, candidates)
    }

    /// `r + γ·max_a' Q_target(s', a')`, or `r` for terminal transitions.
    pub fn bellman_targets(&self, batch: &[&Transition], gamma: f64) -> Vec<f64> {
        let rows: usize = batch.iter().filter_map(|t| t.next.as_ref()).map(Mat::rows).sum();
        let width = batch.iter().find_map(|t| t.next.as_ref()).map_or(0, Mat::cols);
        let mut stacked = Vec::with_capacity(rows * width);
        for n in batch.iter().filter_map(|t| t.next.as_ref()) {
            stacked.extend_from_slice(n.data());
        }
        let values = if rows == 0 {
            Vec::new()
        } else {
            self.target_values(&Mat::from_vec(rows, width, stacked).expect("consistent widths"))
        };
        let mut offset = 0;
        batch
            .iter()
            .map(|t| match &t.next {
                Some(n) if n.rows() > 0 => {
                    let best = values[offset..offset + n.rows()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    offset += n.rows();
                    t.reward + gamma * best
                }
                _ => t.reward,
            })
            .collect()
    }

    /// Mean squared Bellman error of the batch under the current weights.
    pub fn bellman_loss(&self, batch: &[&Transition], gamma: f64) -> f64 {
        let targets = self.bellman_targets(batch, gamma);
        let q = forward(&self.online, &stack_inputs(batch));
        q.iter().zip(&targets).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / q.len() as f64
    }

    /// One Adam step on the Bellman MSE; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &[&Transition], gamma: f64) -> f64 {
        let targets = self.bellman_targets(batch, gamma);
        let mut g = Graph::new();
        let x = g.leaf(stack_inputs(batch));
        let p = self.online.bind(&mut g);
        let q = mlp(&mut g, &p, x);
        let target = Mat::from_vec(targets.len(), 1, targets).expect("one target per row");
        let loss = g.mse(q, &target).expect("shapes match");
        let value = g.value(loss).get(0, 0);
        g.backward(loss).expect("scalar loss");
        self.adam.step(&mut self.online, &p.grads(&g));
        self.updates += 1;
        if self.updates % self.sync_every == 0 {
            self.sync_target();
        }
        value
    }
}

fn stack_inputs(batch: &[&Transition]) -> Mat {
    Mat::from_rows(&batch.iter().map(|t| t.input.as_slice()).collect::<Vec<_>>()).expect("equal input widths")
}

impl ActionValues for QNetwork {
    fn action_values(&self, candidates: &Mat) -> Vec<f64> {
        forward(&self.online, candidates)
    }
}

/// Encoded state of one step: squashed `describe(X)` and squashed `Rep` of
/// every current column.
pub struct StepContext {
    pub state: Vec<f64>,
    pub reps: Vec<Vec<f64>>,
}

impl StepContext {
    pub fn new(x: &FeatureMatrix) -> Self {
        Self {
            state: squashed(describe(x)),
            reps: x.columns().iter().map(|c| squashed(rep(c))).collect(),
        }
    }

    pub fn head_candidates(&self) -> Mat {
        let rows: Vec<Vec<f64>> = self.reps.iter().map(|r| [self.state.as_slice(), r].concat()).collect();
        Mat::from_rows(&rows).expect("fixed width")
    }

    fn op_prefix(&self, head: usize, op: Operation) -> Vec<f64> {
        let mut onehot = vec![0.0; Operation::COUNT];
        onehot[op.id()] = squash(1.0);
        [self.state.as_slice(), &self.reps[head], &onehot].concat()
    }

    pub fn op_candidates(&self, head: usize) -> Mat {
        let rows: Vec<Vec<f64>> = Operation::ALL.iter().map(|&o| self.op_prefix(head, o)).collect();
        Mat::from_rows(&rows).expect("fixed width")
    }

    pub fn tail_candidates(&self, head: usize, op: Operation) -> Mat {
        let prefix = self.op_prefix(head, op);
        let rows: Vec<Vec<f64>> = self.reps.iter().map(|r| [prefix.as_slice(), r].concat()).collect();
        Mat::from_rows(&rows).expect("fixed width")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Actions {
    pub head: usize,
    pub op: Operation,
    pub tail: Option<usize>,
}

/// A decision: the candidate rows shown to the agent and the chosen index.
#[derive(Clone, Debug)]
pub struct Decision {
    pub candidates: Mat,
    pub chosen: usize,
}

#[derive(Clone, Debug)]
pub struct Choice {
    pub actions: Actions,
    pub head: Decision,
    pub op: Decision,
    pub tail: Option<Decision>,
}

fn choose(agent: &dyn ActionValues, candidates: Mat, epsilon: f64, rng: &mut impl Rng) -> Decision {
    let n = candidates.rows();
    let chosen = if epsilon >= 1.0 || rng.random_bool(epsilon.clamp(0.0, 1.0)) {
        rng.random_range(0..n)
    } else {
        let v = agent.action_values(&candidates);
        let mut best = 0;
        for i in 1..n {
            if v[i] > v[best] {
                best = i;
            }
        }
        best
    };
    Decision { candidates, chosen }
}

/// ε-greedy cascade: head column, then operation, then a tail column only
/// when the operation is binary.
pub fn select_actions(
    head: &dyn ActionValues,
    op: &dyn ActionValues,
    tail: &dyn ActionValues,
    ctx: &StepContext,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Choice {
    let h = choose(head, ctx.head_candidates(), epsilon, rng);
    let o = choose(op, ctx.op_candidates(h.chosen), epsilon, rng);
    let operation = Operation::ALL[o.chosen];
    let t = operation
        .is_binary()
        .then(|| choose(tail, ctx.tail_candidates(h.chosen, operation), epsilon, rng));
    Choice {
        actions: Actions {
            head: h.chosen,
            op: operation,
            tail: t.as_ref().map(|d| d.chosen),
        },
        head: h,
        op: o,
        tail: t,
    }
}

/// The guarded column produced by `actions`, or `None` if it is non-finite
/// or constant.
pub fn apply_actions(x: &FeatureMatrix, actions: &Actions) -> Result<Option<Vec<f64>>> {
    let a = x.column(actions.head);
    let col = match actions.tail {
        Some(t) => apply_binary(actions.op, a, x.column(t), Mode::Guarded)?,
        None if actions.op.is_binary() => {
            return Err(Error::Invariant(format!("{} chosen without a tail", actions.op)));
        }
        None => apply_unary(actions.op, a, Mode::Guarded),
    };
    let usable = col.iter().all(|v| v.is_finite()) && col.iter().any(|&v| v != col[0]);
    Ok(usable.then_some(col))
}

/// The composition built by `actions` over the expressions of the current
/// columns.
pub fn compose(exprs: &[Expr], actions: &Actions) -> Result<Expr> {
    let head = exprs[actions.head].clone();
    match actions.tail {
        Some(t) => Expr::binary(actions.op, head, exprs[t].clone()),
        None => Expr::unary(actions.op, head),
    }
}

struct Agent {
    net: QNetwork,
    replay: ReplayBuffer,
    pending: Option<(Vec<f64>, f64)>,
}

impl Agent {
    fn new(input: usize, cfg: &CollectorConfig, rng: &mut impl Rng) -> Self {
        Self {
            net: QNetwork::new(input, cfg.hidden, cfg.lr, cfg.target_sync, rng),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            pending: None,
        }
    }

    /// Closes the previous decision's transition with this decision's
    /// candidates as its next state, and opens a new one.
    fn observe(&mut self, d: &Decision) {
        if let Some((input, reward)) = self.pending.take() {
            self.replay.push(Transition {
                input,
                reward,
                next: Some(d.candidates.clone()),
            });
        }
        self.pending = Some((d.candidates.row(d.chosen).to_vec(), 0.0));
    }

    fn reward(&mut self, r: f64) {
        if let Some(p) = self.pending.as_mut() {
            p.1 = r;
        }
    }

    fn finish_episode(&mut self) {
        if let Some((input, reward)) = self.pending.take() {
            self.replay.push(Transition {
                input,
                reward,
                next: None,
            });
        }
    }

    fn train(&mut self, cfg: &CollectorConfig, rng: &mut impl Rng) -> Option<f64> {
        if self.replay.len() < cfg.batch_size.max(1) {
            return None;
        }
        let batch = self.replay.sample(cfg.batch_size.max(1), rng);
        let batch: Vec<Transition> = batch.into_iter().cloned().collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        Some(self.net.train_step(&refs, cfg.gamma))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub epoch: usize,
    pub epsilon: f64,
    pub kept_steps: usize,
    pub best_score: f64,
    /// Mean Bellman loss over this episode's updates, if any.
    pub mean_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Collection {
    pub records: Vec<TransformationRecord>,
    pub baseline: Score,
    pub episodes: Vec<EpisodeSummary>,
}

/// Runs `cfg.epochs` episodes on `d`, passing every record to `sink` as
/// it is produced.
pub fn collect_with(
    d: &Dataset,
    cfg: &CollectorConfig,
    eval: &EvalConfig,
    sink: &mut dyn FnMut(&TransformationRecord) -> Result<()>,
) -> Result<Collection> {
    if cfg.epochs == 0 {
        return Err(Error::Input("collector needs at least one epoch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agents = [
        Agent::new(HEAD_INPUT, cfg, &mut rng),
        Agent::new(OP_INPUT, cfg, &mut rng),
        Agent::new(TAIL_INPUT, cfg, &mut rng),
    ];
    let baseline = train_eval(&d.x, &d.y, d.task, eval)?;
    let provenance = cfg.provenance();
    let learning = cfg.mode == CollectorMode::Rl;
    let mut records = Vec::new();
    let mut episodes = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epsilon = cfg.epsilon(epoch);
        let mut x = d.x.clone();
        let mut exprs: Vec<Expr> = (0..d.n_features()).map(Expr::feature).collect();
        let mut generated: Vec<Expr> = Vec::new();
        let mut score = baseline.value;
        let mut best = baseline.value;
        let mut losses = Vec::new();
        for _ in 0..cfg.steps {
            let ctx = StepContext::new(&x);
            let choice = {
                let [h, o, t] = &agents;
                let (hv, ov, tv): (&dyn ActionValues, &dyn ActionValues, &dyn ActionValues) = if learning {
                    (&h.net, &o.net, &t.net)
                } else {
                    (&Indifferent, &Indifferent, &Indifferent)
                };
                select_actions(hv, ov, tv, &ctx, epsilon, &mut rng)
            };
            agents[0].observe(&choice.head);
            agents[1].observe(&choice.op);
            if let Some(t) = &choice.tail {
                agents[2].observe(t);
            }
            let reward = match apply_actions(&x, &choice.actions)? {
                Some(col) => {
                    let expr = compose(&exprs, &choice.actions)?;
                    x.push_column(col)?;
                    exprs.push(expr.clone());
                    generated.push(expr);
                    let new = train_eval(&x, &d.y, d.task, eval)?.value;
                    let r = new - score;
                    score = new;
                    best = best.max(new);
                    let record = TransformationRecord {
                        program: infix_to_postfix(&generated),
                        score: new,
                        provenance,
                    };
                    sink(&record)?;
                    records.push(record);
                    r
                }
                None => cfg.penalty,
            };
            agents[0].reward(reward);
            agents[1].reward(reward);
            if choice.tail.is_some() {
                agents[2].reward(reward);
            }
            if learning {
                for a in &mut agents {
                    for _ in 0..cfg.updates_per_step {
                        if let Some(l) = a.train(cfg, &mut rng) {
                            losses.push(l);
                        }
                    }
                }
            }
        }
        for a in &mut agents {
            a.finish_episode();
        }
        let summary = EpisodeSummary {
            epoch,
            epsilon,
            kept_steps: generated.len(),
            best_score: best,
            mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        };
        log::debug!("collect {summary:?}");
        episodes.push(summary);
    }
    Ok(Collection {
        records,
        baseline,
        episodes,
    })
}

pub fn collect(d: &Dataset, cfg: &CollectorConfig, eval: &EvalConfig) -> Result<Collection> {
    collect_with(d, cfg, eval, &mut |_| Ok(()))
}
