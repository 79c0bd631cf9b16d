//! Tabular datasets: CSV ingestion, seeded train/test splits and the
//! fixed-width descriptive-statistics encoding used as agent state.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of rows a dataset must have.
pub const MIN_SAMPLES: usize = 10;

/// Length of the state vector produced by [`describe`].
pub const STATE_WIDTH: usize = 49;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(Task::Classification),
            "regression" | "reg" => Ok(Task::Regression),
            other => Err(Error::Input(format!("unknown task `{other}`"))),
        }
    }
}

/// Column-major real matrix; every column has `n_rows` entries.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::Input("columns have different lengths".into()));
        }
        Ok(Self { n_rows, columns })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Input("rows have different lengths".into()));
        }
        let columns = (0..n_cols)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Ok(Self {
            n_rows: rows.len(),
            columns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn push_column(&mut self, col: Vec<f64>) -> Result<()> {
        if !self.columns.is_empty() && col.len() != self.n_rows {
            return Err(Error::Input(format!(
                "column of length {} for {} rows",
                col.len(),
                self.n_rows
            )));
        }
        self.n_rows = col.len();
        self.columns.push(col);
        Ok(())
    }

    /// Keeps only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            n_rows: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.columns.iter().flatten().all(|v| v.is_finite())
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    /// Checks the dataset invariants: matching lengths, finite values, at
    /// least [`MIN_SAMPLES`] rows, and contiguous 0-based class labels for
    /// classification.
    pub fn new(
        x: FeatureMatrix,
        y: Vec<f64>,
        task: Task,
        feature_names: Vec<String>,
        target_name: String,
    ) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::Input(format!(
                "{} feature rows but {} targets",
                x.n_rows(),
                y.len()
            )));
        }
        if feature_names.len() != x.n_cols() {
            return Err(Error::Input("feature name count differs from column count".into()));
        }
        if y.len() < MIN_SAMPLES {
            return Err(Error::Input(format!(
                "dataset has {} rows, at least {MIN_SAMPLES} required",
                y.len()
            )));
        }
        if x.n_cols() == 0 {
            return Err(Error::Input("dataset has no feature columns".into()));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains non-finite values".into()));
        }
        if task == Task::Classification {
            check_labels(&y)?;
        }
        Ok(Self {
            x,
            y,
            task,
            feature_names,
            target_name,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.n_cols()
    }

    pub fn n_classes(&self) -> usize {
        match self.task {
            Task::Classification => self.y.iter().fold(0.0f64, |m, &v| m.max(v)) as usize + 1,
            Task::Regression => 0,
        }
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            task: self.task,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        }
    }
}

fn check_labels(y: &[f64]) -> Result<()> {
    let mut seen = Vec::new();
    for &v in y {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Input(format!(
                "class label {v} is not a non-negative integer"
            )));
        }
        let k = v as usize;
        if k >= seen.len() {
            seen.resize(k + 1, false);
        }
        seen[k] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Input(format!(
            "class labels are not contiguous: {missing} is missing"
        )));
    }
    Ok(())
}

/// A parsed numeric CSV before dataset invariants are checked.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

/// Reads a numeric CSV and checks it against the [`Dataset`] invariants.
/// `target_column` defaults to the last column.
pub fn load_csv(path: impl AsRef<Path>, task: Task, target_column: Option<&str>) -> Result<Dataset> {
    let t = read_csv(path, target_column)?;
    Dataset::new(t.x, t.y, task, t.feature_names, t.target_name)
}

/// Parses a numeric CSV with a header row, separating the target column
/// (the last one unless named). Unparseable cells are reported with their
/// 1-based data row.
pub fn read_csv(path: impl AsRef<Path>, target_column: Option<&str>) -> Result<CsvTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(Error::Input(format!(
            "{}: need a target and at least one feature column",
            path.display()
        )));
    }
    let target_idx = match target_column {
        Some(name) => headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Input(format!("{}: no column named `{name}`", path.display()))
        })?,
        None => headers.len() - 1,
    };
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Input(format!(
                    "{}: row {} column `{}`: `{cell}` is not a number",
                    path.display(),
                    i + 1,
                    headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "{}: row {} column `{}` is not finite",
                    path.display(),
                    i + 1,
                    headers[j]
                )));
            }
            if j == target_idx {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    let mut feature_names = headers.clone();
    let target_name = feature_names.remove(target_idx);
    Ok(CsvTable {
        x: FeatureMatrix::from_rows(&rows)?,
        y,
        feature_names,
        target_name,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Input(format!("{}: {e}", path.display())),
    }
}

/// Writes features plus target as a CSV with a header row.
pub fn write_csv(
    path: impl AsRef<Path>,
    x: &FeatureMatrix,
    names: &[String],
    y: &[f64],
    target_name: &str,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push(target_name);
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in 0..x.n_rows() {
        let mut row: Vec<String> = x.row(r).iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", y[r]));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    pub split_seed: u64,
}

/// Seeded shuffle, then the first `floor(0.8·n)` rows train and the rest test.
pub fn split(d: &Dataset, seed: u64) -> SplitDataset {
    let n = d.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 4 / 5;
    SplitDataset {
        train: d.subset(&order[..n_train]),
        test: d.subset(&order[n_train..]),
        split_seed: seed,
    }
}

/// Quantile with linear interpolation between order statistics of a
/// sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// count, standard deviation (n − 1), min, max, 25/50/75% quantiles.
fn seven_stats(values: &[f64]) -> [f64; 7] {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    [
        n as f64,
        std,
        sorted[0],
        sorted[n - 1],
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75),
    ]
}

/// Two-pass descriptive statistics: seven statistics per column, then the
/// same seven statistics across each of those rows, flattened row-major to a
/// vector of [`STATE_WIDTH`] regardless of the column count.
pub fn describe_columns<C: AsRef<[f64]>>(columns: &[C]) -> Vec<f64> {
    assert!(!columns.is_empty(), "describe needs at least one column");
    let per_column: Vec<[f64; 7]> = columns.iter().map(|c| seven_stats(c.as_ref())).collect();
    let mut out = Vec::with_capacity(STATE_WIDTH);
    for stat in 0..7 {
        let row: Vec<f64> = per_column.iter().map(|s| s[stat]).collect();
        out.extend_from_slice(&seven_stats(&row));
    }
    out
}

pub fn describe(x: &FeatureMatrix) -> Vec<f64> {
    describe_columns(x.columns())
}
