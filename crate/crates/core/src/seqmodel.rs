//! Encoder–evaluator–decoder model over token sequences.
//!
//! * encoder: token embedding (32) → LSTM (64); row `t` of `E` is the
//!   hidden state after token `t`
//! * evaluator: mean of the rows of `E` → 200 → 200 → 1 (ReLU)
//! * decoder: LSTM (64) from a learned `h0`, dot-product attention over
//!   `E`, logits `W_c (h_d ⊕ context)` over the vocabulary
//!
//! Training uses teacher forcing and the loss
//! `α·L_rec + (1 − α)·L_est`, where `L_rec` is the mean per-token negative
//! log-likelihood of each sequence (averaged over the batch) and `L_est` is
//! the squared error of the evaluator on min-max normalized scores.
//! Batches are padded with an extra embedding row that is masked out of
//! attention, pooling and the loss.

use std::path::Path;

use featsearch_neuro::layers::{dense, init_dense, init_lstm, lstm};
use featsearch_neuro::{Adam, Bound, Graph, Mat, NodeId, ParamFile, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{encode_tokens, PostfixProgram, Vocabulary, EOS_CODE, SOS_CODE};
use crate::record::TransformationRecord;

pub const EMBED: usize = 32;
pub const HIDDEN: usize = 64;
pub const EVAL_HIDDEN: usize = 200;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the reconstruction loss.
    pub alpha: f64,
    /// Upper bound; the effective batch is clamped to the corpus size.
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            batch_size: 1024,
            epochs: 100,
            lr: 1e-3,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Input(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.batch_size == 0 || self.lr <= 0.0 {
            return Err(Error::Input("batch size and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub rec: f64,
    pub est: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub rec: f64,
    pub est: f64,
}

/// Encoder states of one program.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    /// `M × 64`
    pub e: Mat,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.e.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.e.rows() == 0
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.e.mean_rows().into_data()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqModel {
    params: ParamStore,
    vocab: Vocabulary,
    v_min: f64,
    v_max: f64,
    max_program_len: usize,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    vocabulary: Vocabulary,
    v_min: f64,
    v_max: f64,
    max_program_len: usize,
    train_config: TrainConfig,
    params: ParamFile,
}

/// Padded, time-major batch.
struct Batch {
    /// `steps[t][b]`: code at position `t` of sequence `b` (pad past the end)
    steps: Vec<Vec<usize>>,
    lens: Vec<usize>,
    /// `B × M`, one where a real token sits
    mask: Mat,
    /// `B × 1` normalized scores
    scores: Mat,
}

impl Batch {
    fn new(seqs: &[&[u32]], scores: &[f64], pad: usize) -> Self {
        let b = seqs.len();
        let m = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut steps = vec![vec![pad; b]; m];
        let mut mask = Mat::zeros(b, m);
        for (i, s) in seqs.iter().enumerate() {
            for (t, &c) in s.iter().enumerate() {
                steps[t][i] = c as usize;
                mask.set(i, t, 1.0);
            }
        }
        Self {
            steps,
            lens: seqs.iter().map(|s| s.len()).collect(),
            mask,
            scores: Mat::from_vec(b, 1, scores.to_vec()).expect("one score per sequence"),
        }
    }

    fn size(&self) -> usize {
        self.lens.len()
    }
}

struct Forward {
    loss: NodeId,
    parts: LossParts,
    correct: usize,
    predicted: usize,
}

fn lstm_forward(w: &Mat, b: &Mat, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let xh = Mat::row_vector([x, h].concat());
    let z = xh.matmul(w).expect("lstm weight shape");
    let sig = featsearch_neuro::graph::sigmoid;
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for j in 0..hidden {
        let zi = z.get(0, j) + b.get(0, j);
        let zf = z.get(0, hidden + j) + b.get(0, hidden + j);
        let zg = z.get(0, 2 * hidden + j) + b.get(0, 2 * hidden + j);
        let zo = z.get(0, 3 * hidden + j) + b.get(0, 3 * hidden + j);
        c_new[j] = sig(zf) * c[j] + sig(zi) * zg.tanh();
        h_new[j] = sig(zo) * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl SeqModel {
    /// Fresh parameters for `vocab`.
    pub fn new(vocab: Vocabulary, config: TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let v = vocab.size();
        let mut params = ParamStore::new();
        params.init_uniform("emb", v + 1, EMBED, &mut rng);
        init_lstm(&mut params, "enc", EMBED, HIDDEN, &mut rng);
        init_lstm(&mut params, "dec", EMBED, HIDDEN, &mut rng);
        params.init_uniform("dec.h0", 1, HIDDEN, &mut rng);
        init_dense(&mut params, "out", 2 * HIDDEN, v, &mut rng);
        init_dense(&mut params, "ev1", HIDDEN, EVAL_HIDDEN, &mut rng);
        init_dense(&mut params, "ev2", EVAL_HIDDEN, EVAL_HIDDEN, &mut rng);
        init_dense(&mut params, "ev3", EVAL_HIDDEN, 1, &mut rng);
        Self {
            params,
            vocab,
            v_min: 0.0,
            v_max: 1.0,
            max_program_len: 0,
            config,
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.config
    }

    /// Length of the longest program seen in training.
    pub fn max_program_len(&self) -> usize {
        self.max_program_len
    }

    fn pad_code(&self) -> usize {
        self.vocab.size()
    }

    pub fn normalize(&self, v: f64) -> f64 {
        let range = self.v_max - self.v_min;
        if range > 0.0 {
            (v - self.v_min) / range
        } else {
            v - self.v_min
        }
    }

    pub fn denormalize(&self, n: f64) -> f64 {
        let range = self.v_max - self.v_min;
        if range > 0.0 {
            self.v_min + n * range
        } else {
            self.v_min + n
        }
    }

    fn encode_graph(&self, g: &mut Graph, p: &Bound, batch: &Batch) -> Result<Vec<NodeId>> {
        let b = batch.size();
        let mut h = g.leaf(Mat::zeros(b, HIDDEN));
        let mut c = g.leaf(Mat::zeros(b, HIDDEN));
        let mut states = Vec::with_capacity(batch.steps.len());
        for codes in &batch.steps {
            let x = g.gather(p.id("emb"), codes)?;
            (h, c) = lstm(g, p, "enc", x, h, c)?;
            states.push(h);
        }
        Ok(states)
    }

    fn pool_graph(g: &mut Graph, states: &[NodeId], batch: &Batch) -> Result<NodeId> {
        let mut w = batch.mask.clone();
        for (i, &len) in batch.lens.iter().enumerate() {
            w.row_mut(i).iter_mut().for_each(|v| *v /= len as f64);
        }
        Ok(g.weighted_sum(states, &w)?)
    }

    fn evaluator_graph(g: &mut Graph, p: &Bound, pooled: NodeId) -> Result<NodeId> {
        let h = dense(g, p, "ev1", pooled)?;
        let h = g.relu(h);
        let h = dense(g, p, "ev2", h)?;
        let h = g.relu(h);
        Ok(dense(g, p, "ev3", h)?)
    }

    fn forward(&self, g: &mut Graph, p: &Bound, batch: &Batch, alpha: f64) -> Result<Forward> {
        let b = batch.size();
        let m = batch.steps.len();
        let states = self.encode_graph(g, p, batch)?;
        let pooled = Self::pool_graph(g, &states, batch)?;
        let est = Self::evaluator_graph(g, p, pooled)?;
        let l_est = g.mse(est, &batch.scores)?;

        let h0 = g.broadcast_rows(p.id("dec.h0"), b)?;
        let mut h = h0;
        let mut c = g.leaf(Mat::zeros(b, HIDDEN));
        let mut rec_terms = Vec::new();
        let mut correct = 0;
        let mut predicted = 0;
        for t in 1..m {
            let x = g.gather(p.id("emb"), &batch.steps[t - 1])?;
            (h, c) = lstm(g, p, "dec", x, h, c)?;
            let ctx = g.attention(&states, h, Some(&batch.mask))?;
            let hc = g.concat(h, ctx)?;
            let logits = dense(g, p, "out", hc)?;
            let mut targets = vec![0usize; b];
            let mut weights = vec![0.0; b];
            for i in 0..b {
                if t < batch.lens[i] {
                    targets[i] = batch.steps[t][i];
                    weights[i] = 1.0 / ((batch.lens[i] - 1) as f64 * b as f64);
                    let row = g.value(logits).row(i);
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    correct += usize::from(best == targets[i]);
                    predicted += 1;
                }
            }
            if weights.iter().any(|&w| w > 0.0) {
                rec_terms.push(g.softmax_cross_entropy(logits, &targets, &weights)?);
            }
        }
        let mut l_rec = g.leaf(Mat::scalar(0.0));
        for term in rec_terms {
            l_rec = g.add(l_rec, term)?;
        }
        let a = g.scale(l_rec, alpha);
        let e = g.scale(l_est, 1.0 - alpha);
        let loss = g.add(a, e)?;
        Ok(Forward {
            loss,
            parts: LossParts {
                total: g.value(loss).get(0, 0),
                rec: g.value(l_rec).get(0, 0),
                est: g.value(l_est).get(0, 0),
            },
            correct,
            predicted,
        })
    }

    fn corpus(&self, records: &[TransformationRecord]) -> Result<Vec<(Vec<u32>, f64)>> {
        records
            .iter()
            .map(|r| {
                if !r.program.is_well_formed() {
                    return Err(Error::Input(format!("ill-formed training program {}", r.program)));
                }
                Ok((encode_tokens(&r.program, &self.vocab)?, self.normalize(r.score)))
            })
            .collect()
    }

    fn batch_of(&self, items: &[&(Vec<u32>, f64)]) -> Batch {
        let seqs: Vec<&[u32]> = items.iter().map(|(c, _)| c.as_slice()).collect();
        let scores: Vec<f64> = items.iter().map(|(_, v)| *v).collect();
        Batch::new(&seqs, &scores, self.pad_code())
    }

    /// Loss of `records` as one batch under the current weights.
    pub fn loss(&self, records: &[TransformationRecord], alpha: f64) -> Result<LossParts> {
        let corpus = self.corpus(records)?;
        let batch = self.batch_of(&corpus.iter().collect::<Vec<_>>());
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        Ok(self.forward(&mut g, &p, &batch, alpha)?.parts)
    }

    /// Fraction of teacher-forced next-token predictions that are correct.
    pub fn teacher_forced_accuracy(&self, records: &[TransformationRecord]) -> Result<f64> {
        let corpus = self.corpus(records)?;
        let mut correct = 0;
        let mut total = 0;
        for chunk in corpus.iter().collect::<Vec<_>>().chunks(256) {
            let batch = self.batch_of(chunk);
            let mut g = Graph::new();
            let p = self.params.bind(&mut g);
            let f = self.forward(&mut g, &p, &batch, self.config.alpha)?;
            correct += f.correct;
            total += f.predicted;
        }
        Ok(correct as f64 / total.max(1) as f64)
    }

    /// Trains from fresh parameters. `on_epoch` sees each epoch's mean
    /// losses as they are produced.
    pub fn train(
        vocab: Vocabulary,
        records: &[TransformationRecord],
        config: &TrainConfig,
        on_epoch: &mut dyn FnMut(&EpochLoss),
    ) -> Result<(SeqModel, Vec<EpochLoss>)> {
        config.validate()?;
        if records.is_empty() {
            return Err(Error::Input("training needs at least one record".into()));
        }
        let mut model = SeqModel::new(vocab, config.clone());
        model.v_min = records.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
        model.v_max = records.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
        model.max_program_len = records.iter().map(|r| r.program.len()).max().unwrap_or(0);
        let corpus = model.corpus(records)?;
        let batch_size = config.batch_size.clamp(1, corpus.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
        let mut adam = Adam::new(config.lr).with_clip_norm(config.clip_norm);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut curve = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut sums = LossParts {
                total: 0.0,
                rec: 0.0,
                est: 0.0,
            };
            for chunk in order.chunks(batch_size) {
                let items: Vec<&(Vec<u32>, f64)> = chunk.iter().map(|&i| &corpus[i]).collect();
                let batch = model.batch_of(&items);
                let mut g = Graph::new();
                let p = model.params.bind(&mut g);
                let f = model.forward(&mut g, &p, &batch, config.alpha)?;
                g.backward(f.loss)?;
                adam.step(&mut model.params, &p.grads(&g));
                let w = chunk.len() as f64 / corpus.len() as f64;
                sums.total += w * f.parts.total;
                sums.rec += w * f.parts.rec;
                sums.est += w * f.parts.est;
            }
            if !model.params.is_finite() {
                return Err(Error::Invariant(format!("non-finite parameters after epoch {epoch}")));
            }
            let e = EpochLoss {
                epoch,
                total: sums.total,
                rec: sums.rec,
                est: sums.est,
            };
            on_epoch(&e);
            curve.push(e);
        }
        Ok((model, curve))
    }

    pub fn encode(&self, program: &PostfixProgram) -> Result<EmbeddingMatrix> {
        let codes = encode_tokens(program, &self.vocab)?;
        self.encode_codes(&codes)
    }

    pub fn encode_codes(&self, codes: &[u32]) -> Result<EmbeddingMatrix> {
        if codes.is_empty() {
            return Err(Error::Input("cannot encode an empty sequence".into()));
        }
        if let Some(&c) = codes.iter().find(|&&c| c as usize >= self.vocab.size()) {
            return Err(Error::Input(format!("token code {c} outside the vocabulary")));
        }
        let batch = Batch::new(&[codes], &[0.0], self.pad_code());
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let states = self.encode_graph(&mut g, &p, &batch)?;
        let rows: Vec<&[f64]> = states.iter().map(|&s| g.value(s).row(0)).collect();
        Ok(EmbeddingMatrix {
            e: Mat::from_rows(&rows)?,
        })
    }

    /// Normalized predicted score `ω(E)`.
    pub fn estimate(&self, e: &Mat) -> Result<f64> {
        Ok(self.estimate_with_grad(e)?.0)
    }

    /// `ω(E)` and `∂ω/∂E`.
    pub fn estimate_with_grad(&self, e: &Mat) -> Result<(f64, Mat)> {
        if e.rows() == 0 || e.cols() != HIDDEN {
            return Err(Error::Input(format!("embedding must be M × {HIDDEN}, got {:?}", e.shape())));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let ei = g.leaf(e.clone());
        let pooled = g.mean_rows(ei);
        let out = Self::evaluator_graph(&mut g, &p, pooled)?;
        g.backward(out)?;
        let grad = g.grad(ei).cloned().unwrap_or_else(|| Mat::zeros(e.rows(), e.cols()));
        Ok((g.value(out).get(0, 0), grad))
    }

    pub fn decoder_start(&self) -> DecoderState {
        DecoderState {
            h: self.params.get("dec.h0").expect("built at init").data().to_vec(),
            c: vec![0.0; HIDDEN],
        }
    }

    /// Advances the decoder on `prev` and returns the next-token
    /// distribution over the vocabulary together with the new state.
    pub fn decoder_step(&self, e: &Mat, prev: u32, state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        if e.rows() == 0 {
            return Err(Error::Input("decoder needs a non-empty embedding".into()));
        }
        let emb = self.params.get("emb")?;
        if prev as usize >= self.vocab.size() {
            return Err(Error::Input(format!("token code {prev} outside the vocabulary")));
        }
        let (h, c) = lstm_forward(
            self.params.get("dec.w")?,
            self.params.get("dec.b")?,
            emb.row(prev as usize),
            &state.h,
            &state.c,
        );
        let scores: Vec<f64> = (0..e.rows())
            .map(|t| e.row(t).iter().zip(&h).map(|(a, b)| a * b).sum())
            .collect();
        let weights = softmax(&scores);
        let mut ctx = vec![0.0; HIDDEN];
        for (t, &a) in weights.iter().enumerate() {
            for (c, v) in ctx.iter_mut().zip(e.row(t)) {
                *c += a * v;
            }
        }
        let hc = Mat::row_vector([h.as_slice(), &ctx].concat());
        let logits = hc.matmul(self.params.get("out.w")?)?;
        let bias = self.params.get("out.b")?;
        let logits: Vec<f64> = logits.data().iter().zip(bias.data()).map(|(a, b)| a + b).collect();
        Ok((softmax(&logits), DecoderState { h, c }))
    }

    /// `log P(codes[1..] | E)` by chaining [`SeqModel::decoder_step`].
    pub fn sequence_log_prob(&self, e: &Mat, codes: &[u32]) -> Result<f64> {
        let mut state = self.decoder_start();
        let mut total = 0.0;
        for w in codes.windows(2) {
            let (probs, next) = self.decoder_step(e, w[0], &state)?;
            total += probs[w[1] as usize].ln();
            state = next;
        }
        Ok(total)
    }

    pub fn sos_code(&self) -> u32 {
        SOS_CODE
    }

    pub fn eos_code(&self) -> u32 {
        EOS_CODE
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            vocabulary: self.vocab.clone(),
            v_min: self.v_min,
            v_max: self.v_max,
            max_program_len: self.max_program_len,
            train_config: self.config.clone(),
            params: self.params.to_file(),
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::Invariant(format!("checkpoint: {e}")))?;
        std::fs::write(p, text).map_err(|e| Error::io(p, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: bad checkpoint: {e}", p.display())))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "{}: unsupported checkpoint version {}",
                p.display(),
                ck.format_version
            )));
        }
        let model = Self {
            params: ParamStore::from_file(ck.params)?,
            vocab: ck.vocabulary,
            v_min: ck.v_min,
            v_max: ck.v_max,
            max_program_len: ck.max_program_len,
            config: ck.train_config,
        };
        let v = model.vocab.size();
        let expected = [("emb", (v + 1, EMBED)), ("out.w", (2 * HIDDEN, v)), ("dec.h0", (1, HIDDEN))];
        for (name, shape) in expected {
            if model.params.get(name)?.shape() != shape {
                return Err(Error::Input(format!("{}: parameter {name} has the wrong shape", p.display())));
            }
        }
        Ok(model)
    }
}
