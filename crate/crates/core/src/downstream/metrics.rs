//! Classification and regression metrics.
//!
//! Classification metrics are macro-averaged over the labels that occur in
//! either `y_true` or `y_pred`; a class with no predicted (or no true)
//! members contributes 0 to precision (or recall). ROC-AUC is one-vs-rest,
//! macro-averaged over the classes present in `y_true`, with tied scores
//! receiving average ranks.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Input("empty input".into()));
    }
    Ok(())
}

struct PerClass {
    precision: f64,
    recall: f64,
    f1: f64,
}

fn per_class(y_true: &[usize], y_pred: &[usize]) -> Result<Vec<PerClass>> {
    check_lengths(y_true.len(), y_pred.len())?;
    let labels: BTreeSet<usize> = y_true.iter().chain(y_pred).copied().collect();
    Ok(labels
        .into_iter()
        .map(|c| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fneg = 0usize;
            for (&t, &p) in y_true.iter().zip(y_pred) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fneg += 1,
                    (false, false) => {}
                }
            }
            let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fneg);
            let f1 = ratio(2 * tp, 2 * tp + fp + fneg);
            PerClass { precision, recall, f1 }
        })
        .collect())
}

fn macro_mean(stats: &[PerClass], f: impl Fn(&PerClass) -> f64) -> f64 {
    stats.iter().map(f).sum::<f64>() / stats.len() as f64
}

pub fn f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(macro_mean(&per_class(y_true, y_pred)?, |s| s.f1))
}

pub fn precision(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(macro_mean(&per_class(y_true, y_pred)?, |s| s.precision))
}

pub fn recall(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(macro_mean(&per_class(y_true, y_pred)?, |s| s.recall))
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Binary AUC of `scores` for the positive set `positive[i]`.
pub fn roc_auc_binary(positive: &[bool], scores: &[f64]) -> Result<f64> {
    check_lengths(positive.len(), scores.len())?;
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("ROC-AUC needs both classes in y_true".into()));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest macro AUC. `scores[i][c]` is the score of sample `i` for
/// class `c`.
pub fn roc_auc(y_true: &[usize], scores: &[Vec<f64>]) -> Result<f64> {
    check_lengths(y_true.len(), scores.len())?;
    let classes: BTreeSet<usize> = y_true.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::Undefined("ROC-AUC needs at least two classes in y_true".into()));
    }
    let mut total = 0.0;
    for &c in &classes {
        let positive: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        let s: Vec<f64> = scores
            .iter()
            .map(|row| {
                row.get(c)
                    .copied()
                    .ok_or_else(|| Error::Input(format!("no score column for class {c}")))
            })
            .collect::<Result<_>>()?;
        total += roc_auc_binary(&positive, &s)?;
    }
    Ok(total / classes.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn one_minus_rae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let m = mean(y_true);
    let den: f64 = y_true.iter().map(|y| (y - m).abs()).sum();
    if den == 0.0 {
        return Err(Error::Undefined("RAE of a constant target".into()));
    }
    let num: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum();
    Ok(1.0 - num / den)
}

pub fn one_minus_mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let e: Vec<f64> = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).collect();
    Ok(1.0 - mean(&e))
}

pub fn one_minus_mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let e: Vec<f64> = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).collect();
    Ok(1.0 - mean(&e))
}

pub fn one_minus_rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    Ok(1.0 - (1.0 - one_minus_mse(y_true, y_pred)?).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_classification() {
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(precision(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(recall(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn half_right_confusion() {
        // class 1: tp=1 fp=1 fn=1 → f1 = 2/4; class 0 symmetric
        assert_eq!(f1(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn unpredicted_class_scores_zero_precision() {
        // class 2 never predicted: precision 0, recall 0
        let p = precision(&[0, 1, 2], &[0, 1, 1]).unwrap();
        assert!((p - (1.0 + 0.5 + 0.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        let y = [0, 1, 1, 0, 1];
        let s: Vec<f64> = y.iter().map(|&c| c as f64).collect();
        assert_eq!(roc_auc_binary(&y.map(|c| c == 1), &s).unwrap(), 1.0);
        let probs: Vec<Vec<f64>> = s.iter().map(|&p| vec![1.0 - p, p]).collect();
        assert_eq!(roc_auc(&y, &probs).unwrap(), 1.0);
        // all tied → 0.5
        assert_eq!(roc_auc_binary(&[true, false, true], &[0.3; 3]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[1, 1], &vec![vec![0.0, 1.0]; 2]), Err(Error::Undefined(_))));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let y = [true, false, true, true, false, false, true];
        let s = [0.9, 0.3, 0.3, 0.8, 0.1, 0.85, 0.5];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] && !y[j] {
                    pairs += 1.0;
                    wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((roc_auc_binary(&y, &s).unwrap() - wins / pairs).abs() < 1e-15);
    }

    #[test]
    fn regression_examples() {
        let y = [1.0, 2.0, 4.0];
        for f in [one_minus_rae, one_minus_mae, one_minus_mse, one_minus_rmse] {
            assert_eq!(f(&y, &y).unwrap(), 1.0);
        }
        let m = [7.0 / 3.0; 3];
        assert!(one_minus_rae(&y, &m).unwrap().abs() < 1e-15);
        assert_eq!(one_minus_rae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(one_minus_rae(&[3.0, 3.0], &[1.0, 1.0]), Err(Error::Undefined(_))));
        assert_eq!(one_minus_rmse(&[0.0, 0.0], &[2.0, 2.0]).unwrap(), -1.0);
    }
}
