//! L2-regularized least squares on standardized features, solved by
//! Cholesky factorization. Multi-output targets share one factorization
//! (one-vs-rest indicators for classification).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Ridge {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// p × k
    weights: DMatrix<f64>,
    intercept: DVector<f64>,
}

impl Ridge {
    /// `targets[r]` is the k-wide target row for sample `rows[r]`.
    pub fn fit(columns: &[Vec<f64>], rows: &[usize], targets: &[Vec<f64>], alpha: f64) -> Result<Self> {
        let n = rows.len();
        let p = columns.len();
        let k = targets.first().map_or(0, Vec::len);
        if n == 0 || k == 0 || targets.len() != n {
            return Err(Error::Input("ridge needs matching non-empty rows and targets".into()));
        }
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for (j, col) in columns.iter().enumerate() {
            let m = rows.iter().map(|&r| col[r]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|&r| (col[r] - m).powi(2)).sum::<f64>() / n as f64;
            mean[j] = m;
            if var > 0.0 {
                scale[j] = var.sqrt();
            }
        }
        let x = DMatrix::from_fn(n, p, |i, j| (columns[j][rows[i]] - mean[j]) / scale[j]);
        let intercept = DVector::from_fn(k, |c, _| targets.iter().map(|t| t[c]).sum::<f64>() / n as f64);
        let y = DMatrix::from_fn(n, k, |i, c| targets[i][c] - intercept[c]);
        let mut gram = x.transpose() * &x;
        for j in 0..p {
            gram[(j, j)] += alpha;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Invariant("ridge normal equations not positive definite".into()))?;
        let weights = chol.solve(&(x.transpose() * y));
        Ok(Self {
            mean,
            scale,
            weights,
            intercept,
        })
    }

    pub fn predict_with(&self, value: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..self.intercept.len())
            .map(|c| {
                self.intercept[c]
                    + (0..self.mean.len())
                        .map(|j| (value(j) - self.mean[j]) / self.scale[j] * self.weights[(j, c)])
                        .sum::<f64>()
            })
            .collect()
    }
}
