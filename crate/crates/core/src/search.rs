//! Gradient-ascent search in embedding space and beam-search decoding.
//!
//! For each of the top-T records: encode it, move the embedding uphill on
//! the evaluator with a backtracking step size, beam-decode the result,
//! keep the segments that are valid under strict evaluation, and score
//! the original features plus those segments' columns. The candidate with
//! the best measured score wins (ties go to the earlier seed).

use std::collections::BTreeSet;

use featsearch_neuro::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix};
use crate::downstream::{train_eval, EvalConfig, Score};
use crate::error::{Error, Result};
use crate::expr::{decode_tokens, evaluate, feature_space, Evaluation, PostfixProgram, Token};
use crate::opset::Mode;
use crate::record::TransformationRecord;
use crate::seqmodel::{DecoderState, SeqModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Number of seed records.
    pub top_t: usize,
    /// Initial ascent step size.
    pub eta: f64,
    pub ascent_steps: usize,
    pub beam: usize,
    /// Maximum decoded length in tokens; `None` uses twice the longest
    /// training program.
    pub max_decode_len: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            top_t: 20,
            eta: 1.0,
            ascent_steps: 10,
            beam: 5,
            max_decode_len: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_t == 0 || self.beam == 0 || self.eta.is_nan() || self.eta <= 0.0 {
            return Err(Error::Input("search needs T ≥ 1, b ≥ 1 and η > 0".into()));
        }
        Ok(())
    }
}

/// Segments of a program as a sorted multiset, so segment permutations of
/// one program compare equal.
fn segment_multiset(p: &PostfixProgram) -> Vec<Vec<Token>> {
    let mut segs: Vec<Vec<Token>> = p.segments().into_iter().map(<[Token]>::to_vec).collect();
    segs.sort();
    segs
}

/// Top `t` records by score, then shorter program, then token order;
/// records whose segment multisets coincide count once.
pub fn select_seeds(records: &[TransformationRecord], t: usize) -> Vec<&TransformationRecord> {
    let mut sorted: Vec<&TransformationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.program.len().cmp(&b.program.len()))
            .then_with(|| a.program.tokens().cmp(b.program.tokens()))
    });
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in sorted {
        if out.len() == t {
            break;
        }
        if seen.insert(segment_multiset(&r.program)) {
            out.push(r);
        }
    }
    out
}

/// A differentiable scalar objective over embedding matrices.
pub trait Objective {
    fn value_and_grad(&self, e: &Mat) -> Result<(f64, Mat)>;
}

impl Objective for SeqModel {
    fn value_and_grad(&self, e: &Mat) -> Result<(f64, Mat)> {
        self.estimate_with_grad(e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ascent {
    pub e: Mat,
    pub before: f64,
    pub after: f64,
    /// Accepted steps.
    pub steps: usize,
    /// Step size in effect at the end.
    pub eta: f64,
}

const MAX_HALVINGS: usize = 30;

/// Iterated `E ← E + η·∂ω/∂E`. A step that lowers ω is retried from the
/// same point with η halved; the loop stops after `steps` accepted steps,
/// when no halving helps, or when the relative gain drops below 1e-6.
/// Never returns a point with a lower value than the start.
pub fn ascend(obj: &dyn Objective, e: &Mat, eta: f64, steps: usize) -> Result<Ascent> {
    let (start, mut grad) = obj.value_and_grad(e)?;
    let mut cur = e.clone();
    let mut value = start;
    let mut eta = eta;
    let mut accepted = 0;
    'outer: while accepted < steps {
        for _ in 0..=MAX_HALVINGS {
            let mut cand = cur.clone();
            cand.add_scaled(&grad, eta);
            let (v, g) = obj.value_and_grad(&cand)?;
            if v >= value && v.is_finite() {
                let gain = (v - value) / value.abs().max(1e-12);
                cur = cand;
                value = v;
                grad = g;
                accepted += 1;
                if gain < 1e-6 {
                    break 'outer;
                }
                continue 'outer;
            }
            eta /= 2.0;
        }
        break;
    }
    Ok(Ascent {
        e: cur,
        before: start,
        after: value,
        steps: accepted,
        eta,
    })
}

/// Autoregressive next-token model driving [`beam_decode`].
pub trait StepModel {
    type State: Clone;
    fn start(&self) -> Self::State;
    fn step(&self, prev: u32, state: &Self::State) -> Result<(Vec<f64>, Self::State)>;
    fn sos(&self) -> u32;
    fn eos(&self) -> u32;
}

/// The trained decoder attending over one embedding.
pub struct Decoder<'a> {
    pub model: &'a SeqModel,
    pub e: &'a Mat,
}

impl StepModel for Decoder<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        self.model.decoder_start()
    }

    fn step(&self, prev: u32, state: &DecoderState) -> Result<(Vec<f64>, DecoderState)> {
        self.model.decoder_step(self.e, prev, state)
    }

    fn sos(&self) -> u32 {
        self.model.sos_code()
    }

    fn eos(&self) -> u32 {
        self.model.eos_code()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub codes: Vec<u32>,
    /// Sum of the per-step log-probabilities of `codes[1..]`.
    pub log_prob: f64,
    /// False when no beam emitted EOS within the length limit and EOS was
    /// appended to the best unfinished beam.
    pub completed: bool,
}

struct Beam<S> {
    codes: Vec<u32>,
    log_prob: f64,
    state: S,
    done: bool,
}

/// Beam search in the log domain. Finished beams stay in the pool and
/// compete with live ones for the `b` slots. Beams stop growing at
/// `max_len` tokens; if none has emitted EOS by then, EOS is appended to
/// the best one.
pub fn beam_decode<M: StepModel>(model: &M, b: usize, max_len: usize) -> Result<Decoded> {
    let b = b.max(1);
    let eos = model.eos();
    let mut beams = vec![Beam {
        codes: vec![model.sos()],
        log_prob: 0.0,
        state: model.start(),
        done: false,
    }];
    while beams.iter().any(|bm| !bm.done && bm.codes.len() < max_len) {
        let mut pool: Vec<Beam<M::State>> = Vec::new();
        for bm in beams {
            if bm.done || bm.codes.len() >= max_len {
                pool.push(bm);
                continue;
            }
            let last = *bm.codes.last().expect("starts with SOS");
            let (probs, state) = model.step(last, &bm.state)?;
            for (c, &p) in probs.iter().enumerate() {
                let mut codes = bm.codes.clone();
                codes.push(c as u32);
                pool.push(Beam {
                    codes,
                    log_prob: bm.log_prob + p.ln(),
                    state: state.clone(),
                    done: c as u32 == eos,
                });
            }
        }
        // stable: equal scores keep generation order
        pool.sort_by(|x, y| y.log_prob.total_cmp(&x.log_prob));
        pool.truncate(b);
        beams = pool;
    }
    // the pool is sorted, so the first finished beam is the best one
    if let Some(best) = beams.iter().find(|bm| bm.done) {
        return Ok(Decoded {
            codes: best.codes.clone(),
            log_prob: best.log_prob,
            completed: true,
        });
    }
    let best = &beams[0];
    let last = *best.codes.last().expect("non-empty");
    let (probs, _) = model.step(last, &best.state)?;
    let mut codes = best.codes.clone();
    codes.push(eos);
    Ok(Decoded {
        codes,
        log_prob: best.log_prob + probs[eos as usize].ln(),
        completed: false,
    })
}

/// Repeated argmax until EOS or `max_len` tokens.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Decoded> {
    let mut codes = vec![model.sos()];
    let mut state = model.start();
    let mut log_prob = 0.0;
    while codes.len() < max_len {
        let (probs, next) = model.step(*codes.last().expect("non-empty"), &state)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        codes.push(best as u32);
        log_prob += probs[best].ln();
        state = next;
        if best as u32 == model.eos() {
            return Ok(Decoded {
                codes,
                log_prob,
                completed: true,
            });
        }
    }
    let (probs, _) = model.step(*codes.last().expect("non-empty"), &state)?;
    codes.push(model.eos());
    Ok(Decoded {
        codes,
        log_prob: log_prob + probs[model.eos() as usize].ln(),
        completed: false,
    })
}

/// Guarded-mode feature space of `p` over the original columns and its
/// cross-validated score. Shared by search and standalone evaluation.
pub fn score_program(p: &PostfixProgram, d: &Dataset, eval: &EvalConfig) -> Result<(Score, FeatureMatrix, Evaluation)> {
    let (space, evaluation) = feature_space(p, &d.x, Mode::Guarded)?;
    let score = train_eval(&space, &d.y, d.task, eval)?;
    Ok((score, space, evaluation))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub seed_index: usize,
    pub seed_program: String,
    pub seed_score: f64,
    /// Evaluator output before and after ascent, in score units.
    pub predicted_before: f64,
    pub predicted_after: f64,
    pub ascent_steps: usize,
    pub decoded_program: String,
    pub log_prob: f64,
    pub completed: bool,
    pub total_segments: usize,
    pub valid_segments: usize,
    /// Every segment grammatical and finite under strict evaluation.
    pub valid: bool,
    /// The valid segments, when there are any.
    pub kept_program: Option<String>,
    pub measured_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub baseline: Score,
    pub candidates: Vec<CandidateResult>,
    /// Valid decoded sequences over decoded sequences.
    pub valid_rate: f64,
    pub best_seed: Option<usize>,
    pub best_program: Option<String>,
    pub best_score: f64,
    /// No candidate had a valid segment; the original features are returned.
    pub fell_back_to_original: bool,
    pub config: SearchConfig,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub report: SearchReport,
    pub best_program: Option<PostfixProgram>,
    pub best_x: FeatureMatrix,
}

struct Evaluated {
    result: CandidateResult,
    kept: Option<PostfixProgram>,
}

fn search_one(
    model: &SeqModel,
    seed_index: usize,
    seed: &TransformationRecord,
    d: &Dataset,
    cfg: &SearchConfig,
    eval: &EvalConfig,
    max_len: usize,
) -> Result<Evaluated> {
    let e = model.encode(&seed.program)?;
    let ascent = ascend(model, &e.e, cfg.eta, cfg.ascent_steps)?;
    let decoded = beam_decode(
        &Decoder {
            model,
            e: &ascent.e,
        },
        cfg.beam,
        max_len,
    )?;
    let program = decode_tokens(&decoded.codes, model.vocabulary())?;
    let strict: Evaluation = evaluate(&program, &d.x, Mode::Strict)?;
    let report = &strict.report;
    let valid = report.total_segment_count() > 0 && report.all_valid();
    let kept = (!strict.kept.is_empty()).then(|| strict.valid_program(&program));
    let measured = match &kept {
        Some(k) => Some(score_program(k, d, eval)?.0.value),
        None => None,
    };
    Ok(Evaluated {
        result: CandidateResult {
            seed_index,
            seed_program: seed.program.to_string(),
            seed_score: seed.score,
            predicted_before: model.denormalize(ascent.before),
            predicted_after: model.denormalize(ascent.after),
            ascent_steps: ascent.steps,
            decoded_program: program.to_string(),
            log_prob: decoded.log_prob,
            completed: decoded.completed,
            total_segments: report.total_segment_count(),
            valid_segments: report.valid_segment_count(),
            valid,
            kept_program: kept.as_ref().map(ToString::to_string),
            measured_score: measured,
        },
        kept,
    })
}

/// Index of the highest score; ties go to the earliest. `None` when no
/// candidate was scored.
pub fn select_best(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

pub fn run_search(
    model: &SeqModel,
    records: &[TransformationRecord],
    d: &Dataset,
    cfg: &SearchConfig,
    eval: &EvalConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Input("search needs at least one record".into()));
    }
    if model.vocabulary().n_features != d.n_features() {
        return Err(Error::Input(format!(
            "checkpoint was trained for {} features, dataset has {}",
            model.vocabulary().n_features,
            d.n_features()
        )));
    }
    let baseline = train_eval(&d.x, &d.y, d.task, eval)?;
    let max_len = cfg.max_decode_len.unwrap_or(2 * model.max_program_len()).max(3);
    let seeds = select_seeds(records, cfg.top_t);
    let evaluated: Vec<Evaluated> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| search_one(model, i, s, d, cfg, eval, max_len))
        .collect::<Result<_>>()?;
    let scores: Vec<Option<f64>> = evaluated.iter().map(|e| e.result.measured_score).collect();
    let best = select_best(&scores);
    let valid_rate = evaluated.iter().filter(|e| e.result.valid).count() as f64 / evaluated.len() as f64;
    let (best_program, best_x, best_score) = match best {
        Some(i) => {
            let p = evaluated[i].kept.clone().expect("measured implies kept");
            let (score, x, _) = score_program(&p, d, eval)?;
            (Some(p), x, score.value)
        }
        None => {
            log::warn!("no decoded candidate had a valid segment; keeping the original features");
            (None, d.x.clone(), baseline.value)
        }
    };
    let report = SearchReport {
        baseline,
        candidates: evaluated.into_iter().map(|e| e.result).collect(),
        valid_rate,
        best_seed: best,
        best_program: best_program.as_ref().map(ToString::to_string),
        best_score,
        fell_back_to_original: best.is_none(),
        config: cfg.clone(),
    };
    Ok(SearchOutcome {
        report,
        best_program,
        best_x,
    })
}
