//! Shared helpers for the integration suites: random programs, an
//! independent recursive evaluator, and small dataset builders.
#![allow(dead_code)]

use featsearch::data::{Dataset, FeatureMatrix, Task};
use featsearch::expr::Expr;
use featsearch::opset::{apply_binary, apply_unary, Mode, Operation};
use rand::Rng;

/// Random expression tree of depth ≤ `max_depth` over `n_features` columns.
pub fn random_expr(rng: &mut impl Rng, n_features: usize, max_depth: usize) -> Expr {
    if max_depth <= 1 || rng.random_bool(0.3) {
        return Expr::feature(rng.random_range(0..n_features));
    }
    let op = Operation::ALL[rng.random_range(0..Operation::COUNT)];
    if op.is_binary() {
        let l = random_expr(rng, n_features, max_depth - 1);
        let r = random_expr(rng, n_features, max_depth - 1);
        Expr::binary(op, l, r).unwrap()
    } else {
        Expr::unary(op, random_expr(rng, n_features, max_depth - 1)).unwrap()
    }
}

/// 1–`max_segments` random compositions.
pub fn random_program(rng: &mut impl Rng, n_features: usize, max_depth: usize, max_segments: usize) -> Vec<Expr> {
    let n = rng.random_range(1..=max_segments);
    (0..n).map(|_| random_expr(rng, n_features, max_depth)).collect()
}

/// Recursive tree evaluation, independent of the postfix stack machine.
/// `None` when any intermediate column has a non-finite entry.
pub fn eval_tree(e: &Expr, x: &FeatureMatrix, mode: Mode) -> Option<Vec<f64>> {
    let col = match e {
        Expr::Feature(i) => x.column(*i).to_vec(),
        Expr::Unary(op, a) => apply_unary(*op, &eval_tree(a, x, mode)?, mode),
        Expr::Binary(op, a, b) => apply_binary(*op, &eval_tree(a, x, mode)?, &eval_tree(b, x, mode)?, mode).unwrap(),
    };
    col.iter().all(|v| v.is_finite()).then_some(col)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> FeatureMatrix {
    FeatureMatrix::from_columns(
        (0..cols)
            .map(|_| (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect(),
    )
    .unwrap()
}

pub fn dataset(columns: Vec<Vec<f64>>, y: Vec<f64>, task: Task) -> Dataset {
    let names = (0..columns.len()).map(|i| format!("f{i}")).collect();
    Dataset::new(FeatureMatrix::from_columns(columns).unwrap(), y, task, names, "y".into()).unwrap()
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
