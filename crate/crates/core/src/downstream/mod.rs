//! Downstream model and metric used as the search objective.
//!
//! [`train_eval`] scores a feature matrix by k-fold cross-validation
//! (stratified for classification) of a random forest, decision tree or
//! ridge model. Everything is seeded from `EvalConfig::cv_seed`, and fold
//! results are reduced in fold order, so repeated calls are bit-identical.

pub mod forest;
pub mod metrics;
pub mod ridge;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Task};
use crate::error::{Error, Result};
use forest::{ForestParams, RandomForest};
use ridge::Ridge;
use tree::{DecisionTree, Target, TreeParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    DecisionTree,
    Ridge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1,
    Precision,
    Recall,
    Rocauc,
    OneMinusRae,
    OneMinusMae,
    OneMinusMse,
    OneMinusRmse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::F1,
        Metric::Precision,
        Metric::Recall,
        Metric::Rocauc,
        Metric::OneMinusRae,
        Metric::OneMinusMae,
        Metric::OneMinusMse,
        Metric::OneMinusRmse,
    ];

    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Classification => Metric::F1,
            Task::Regression => Metric::OneMinusRae,
        }
    }

    pub fn task(self) -> Task {
        match self {
            Metric::F1 | Metric::Precision | Metric::Recall | Metric::Rocauc => Task::Classification,
            _ => Task::Regression,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::F1 => "f1",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::Rocauc => "rocauc",
            Metric::OneMinusRae => "one_minus_rae",
            Metric::OneMinusMae => "one_minus_mae",
            Metric::OneMinusMse => "one_minus_mse",
            Metric::OneMinusRmse => "one_minus_rmse",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown metric {s:?}")))
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_forest" => Ok(ModelKind::RandomForest),
            "decision_tree" => Ok(ModelKind::DecisionTree),
            "ridge" => Ok(ModelKind::Ridge),
            _ => Err(Error::Input(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub model: ModelKind,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub ridge_alpha: f64,
    /// `None` picks [`Metric::default_for`] the task.
    pub metric: Option<Metric>,
    pub folds: usize,
    pub cv_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::RandomForest,
            n_trees: 10,
            max_depth: 10,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            ridge_alpha: 1.0,
            metric: None,
            folds: 5,
            cv_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn metric_for(&self, task: Task) -> Result<Metric> {
        let m = self.metric.unwrap_or(Metric::default_for(task));
        if m.task() != task {
            return Err(Error::Input(format!("metric {m} does not apply to {task:?}")));
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub metric: Metric,
}

/// SplitMix64 finalizer over `base` and `index`; gives well-separated
/// per-tree and per-fold seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Fitted {
    Tree(DecisionTree),
    Forest(RandomForest),
    Ridge(Ridge),
}

impl Fitted {
    fn predict(&self, columns: &[Vec<f64>], row: usize) -> Vec<f64> {
        let value = |j: usize| columns[j][row];
        match self {
            Fitted::Tree(t) => t.predict_with(value).to_vec(),
            Fitted::Forest(f) => f.predict_with(value),
            Fitted::Ridge(r) => r.predict_with(value),
        }
    }
}

/// Targets converted once per evaluation.
enum Labels {
    Classes(Vec<usize>, usize),
    Values(Vec<f64>),
}

impl Labels {
    fn new(y: &[f64], task: Task) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite target value".into()));
        }
        match task {
            Task::Regression => Ok(Labels::Values(y.to_vec())),
            Task::Classification => {
                let mut labels = Vec::with_capacity(y.len());
                for &v in y {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Input(format!("class label {v} is not a non-negative integer")));
                    }
                    labels.push(v as usize);
                }
                let k = labels.iter().max().map_or(0, |m| m + 1);
                let distinct = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
                if distinct < 2 {
                    return Err(Error::Input("classification needs at least two classes".into()));
                }
                Ok(Labels::Classes(labels, k))
            }
        }
    }

    fn target(&self) -> Target<'_> {
        match self {
            Labels::Classes(l, k) => Target::Classes {
                labels: l,
                n_classes: *k,
            },
            Labels::Values(v) => Target::Values(v),
        }
    }
}

fn fit(columns: &[Vec<f64>], rows: &[usize], labels: &Labels, cfg: &EvalConfig, seed: u64) -> Result<Fitted> {
    let p = columns.len();
    let tree = TreeParams {
        max_depth: cfg.max_depth,
        min_samples_leaf: cfg.min_samples_leaf,
        max_features: match cfg.max_features {
            MaxFeatures::All => None,
            MaxFeatures::Sqrt => Some(((p as f64).sqrt().floor() as usize).max(1)),
        },
    };
    let target = labels.target();
    Ok(match cfg.model {
        ModelKind::RandomForest => Fitted::Forest(RandomForest::fit(
            columns,
            rows,
            target,
            &ForestParams {
                n_trees: cfg.n_trees,
                bootstrap: cfg.bootstrap,
                tree,
            },
            seed,
        )),
        ModelKind::DecisionTree => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
            let params = TreeParams {
                max_features: None,
                ..tree
            };
            Fitted::Tree(DecisionTree::fit(columns, rows, target, &params, &mut rng))
        }
        ModelKind::Ridge => {
            let targets: Vec<Vec<f64>> = match labels {
                Labels::Classes(l, k) => rows
                    .iter()
                    .map(|&r| (0..*k).map(|c| f64::from(u8::from(l[r] == c))).collect())
                    .collect(),
                Labels::Values(v) => rows.iter().map(|&r| vec![v[r]]).collect(),
            };
            Fitted::Ridge(Ridge::fit(columns, rows, &targets, cfg.ridge_alpha)?)
        }
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn score_predictions(metric: Metric, labels: &Labels, rows: &[usize], preds: &[Vec<f64>]) -> Result<f64> {
    match labels {
        Labels::Classes(l, _) => {
            let y_true: Vec<usize> = rows.iter().map(|&r| l[r]).collect();
            let y_pred: Vec<usize> = preds.iter().map(|p| argmax(p)).collect();
            match metric {
                Metric::F1 => metrics::f1(&y_true, &y_pred),
                Metric::Precision => metrics::precision(&y_true, &y_pred),
                Metric::Recall => metrics::recall(&y_true, &y_pred),
                Metric::Rocauc => metrics::roc_auc(&y_true, preds),
                _ => unreachable!("metric checked against task"),
            }
        }
        Labels::Values(v) => {
            let y_true: Vec<f64> = rows.iter().map(|&r| v[r]).collect();
            let y_pred: Vec<f64> = preds.iter().map(|p| p[0]).collect();
            match metric {
                Metric::OneMinusRae => metrics::one_minus_rae(&y_true, &y_pred),
                Metric::OneMinusMae => metrics::one_minus_mae(&y_true, &y_pred),
                Metric::OneMinusMse => metrics::one_minus_mse(&y_true, &y_pred),
                Metric::OneMinusRmse => metrics::one_minus_rmse(&y_true, &y_pred),
                _ => unreachable!("metric checked against task"),
            }
        }
    }
}

fn check_inputs(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if x.n_cols() == 0 {
        return Err(Error::Input("feature matrix has no columns".into()));
    }
    if x.n_rows() != y.len() {
        return Err(Error::Input(format!("{} rows but {} targets", x.n_rows(), y.len())));
    }
    if !x.is_finite() {
        return Err(Error::Input("non-finite feature value".into()));
    }
    Ok(())
}

/// Test-row indices of each fold. Classification folds are stratified:
/// rows are shuffled, grouped by class and dealt round-robin.
pub fn kfold(y: &[f64], task: Task, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if task == Task::Classification {
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    }
    let k = k.max(1);
    let mut folds = vec![Vec::new(); k];
    for (i, r) in order.into_iter().enumerate() {
        folds[i % k].push(r);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Cross-validated score of `cfg.model` on `(x, y)`. Folds whose metric is
/// undefined (for example a single-class test fold under ROC-AUC) are
/// skipped; if every fold is undefined the error is returned.
pub fn train_eval(x: &FeatureMatrix, y: &[f64], task: Task, cfg: &EvalConfig) -> Result<Score> {
    check_inputs(x, y)?;
    let metric = cfg.metric_for(task)?;
    let labels = Labels::new(y, task)?;
    if cfg.folds < 2 || cfg.folds > y.len() {
        return Err(Error::Input(format!("cannot run {}-fold CV on {} rows", cfg.folds, y.len())));
    }
    let folds = kfold(y, task, cfg.folds, cfg.cv_seed);
    let columns = x.columns();
    let results: Vec<Result<f64>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let mut in_test = vec![false; y.len()];
            test.iter().for_each(|&r| in_test[r] = true);
            let train: Vec<usize> = (0..y.len()).filter(|&r| !in_test[r]).collect();
            let model = fit(columns, &train, &labels, cfg, derive_seed(cfg.cv_seed, f as u64))?;
            let preds: Vec<Vec<f64>> = test.iter().map(|&r| model.predict(columns, r)).collect();
            score_predictions(metric, &labels, test, &preds)
        })
        .collect();
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut undefined = None;
    for r in results {
        match r {
            Ok(v) => {
                sum += v;
                used += 1;
            }
            Err(e @ Error::Undefined(_)) => undefined = Some(e),
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(undefined.unwrap_or_else(|| Error::Undefined("no fold produced a score".into())));
    }
    Ok(Score {
        value: sum / used as f64,
        metric,
    })
}

/// Fits on `(x_train, y_train)` and scores on the held-out rows.
pub fn holdout_eval(
    x_train: &FeatureMatrix,
    y_train: &[f64],
    x_test: &FeatureMatrix,
    y_test: &[f64],
    task: Task,
    cfg: &EvalConfig,
) -> Result<Score> {
    check_inputs(x_train, y_train)?;
    check_inputs(x_test, y_test)?;
    if x_train.n_cols() != x_test.n_cols() {
        return Err(Error::Input("train and test column counts differ".into()));
    }
    let metric = cfg.metric_for(task)?;
    let n_train = y_train.len();
    let y: Vec<f64> = y_train.iter().chain(y_test).copied().collect();
    let labels = Labels::new(&y, task)?;
    let columns: Vec<Vec<f64>> = x_train
        .columns()
        .iter()
        .zip(x_test.columns())
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..y.len()).collect();
    let model = fit(&columns, &train, &labels, cfg, cfg.cv_seed)?;
    let preds: Vec<Vec<f64>> = test.iter().map(|&r| model.predict(&columns, r)).collect();
    Ok(Score {
        value: score_predictions(metric, &labels, &test, &preds)?,
        metric,
    })
}
