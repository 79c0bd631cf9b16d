//! The sixteen mathematical operations a transformation program may use.
//!
//! Every operation has a *strict* evaluation (the textbook function, which
//! may produce NaN or infinities) and a *guarded* evaluation that never
//! produces a non-finite value from finite input:
//!
//! | op           | guarded form                                  |
//! |--------------|-----------------------------------------------|
//! | `sqrt`       | `sqrt(|x|)`                                   |
//! | `log`        | `ln(|x| + 1e-10)`                             |
//! | `reciprocal` | `1 / (x + 1e-10·s)`, `s` = sign of x, 1 at 0  |
//! | `divide`     | `a / 1e-10` where `b == 0`                    |
//!
//! Any other elementwise result that is still non-finite in guarded mode is
//! clamped: NaN becomes 0 and ±∞ becomes ±`f64::MAX`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GUARD_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Strict,
    Guarded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Elementwise,
    /// Output depends on the whole input column.
    ColumnStatistical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operation {
    Sqrt,
    Square,
    Cos,
    Sin,
    Tan,
    Exp,
    Cube,
    Log,
    Reciprocal,
    Quantile,
    MinMax,
    Sigmoid,
    Plus,
    Subtract,
    Multiply,
    Divide,
}

use Operation::*;

impl Operation {
    /// All operations in id order.
    pub const ALL: [Operation; 16] = [
        Sqrt, Square, Cos, Sin, Tan, Exp, Cube, Log, Reciprocal, Quantile, MinMax, Sigmoid, Plus,
        Subtract, Multiply, Divide,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Sqrt => "sqrt",
            Square => "square",
            Cos => "cos",
            Sin => "sin",
            Tan => "tan",
            Exp => "exp",
            Cube => "cube",
            Log => "log",
            Reciprocal => "reciprocal",
            Quantile => "quantile",
            MinMax => "minmax",
            Sigmoid => "sigmoid",
            Plus => "plus",
            Subtract => "subtract",
            Multiply => "multiply",
            Divide => "divide",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Plus | Subtract | Multiply | Divide => 2,
            _ => 1,
        }
    }

    pub fn is_binary(self) -> bool {
        self.arity() == 2
    }

    pub fn kind(self) -> OpKind {
        match self {
            Quantile | MinMax => OpKind::ColumnStatistical,
            _ => OpKind::Elementwise,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown operation `{s}`")))
    }
}

fn clamp_finite(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else if v == f64::INFINITY {
        f64::MAX
    } else if v == f64::NEG_INFINITY {
        -f64::MAX
    } else {
        v
    }
}

fn unary_scalar(op: Operation, x: f64, mode: Mode) -> f64 {
    match (op, mode) {
        (Sqrt, Mode::Strict) => x.sqrt(),
        (Sqrt, Mode::Guarded) => x.abs().sqrt(),
        (Log, Mode::Strict) => x.ln(),
        (Log, Mode::Guarded) => (x.abs() + GUARD_EPS).ln(),
        (Reciprocal, Mode::Strict) => 1.0 / x,
        (Reciprocal, Mode::Guarded) => {
            let s = if x < 0.0 { -1.0 } else { 1.0 };
            1.0 / (x + GUARD_EPS * s)
        }
        (Square, _) => x * x,
        (Cube, _) => x * x * x,
        (Cos, _) => x.cos(),
        (Sin, _) => x.sin(),
        (Tan, _) => x.tan(),
        (Exp, _) => x.exp(),
        (Sigmoid, _) => 1.0 / (1.0 + (-x).exp()),
        _ => unreachable!("{op} is not an elementwise unary operation"),
    }
}

/// Empirical CDF position `rank / (n - 1)` with tied values sharing their
/// average rank. Constant columns map to 0.5.
fn quantile_transform(col: &[f64]) -> Vec<f64> {
    let n = col.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut out = vec![0.5; n];
    if n < 2 {
        return out;
    }
    let denom = (n - 1) as f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && col[order[j + 1]] == col[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = rank / denom;
        }
        i = j + 1;
    }
    out
}

fn minmax_scale(col: &[f64]) -> Vec<f64> {
    let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.0; col.len()];
    }
    let range = max - min;
    col.iter().map(|&x| (x - min) / range).collect()
}

/// Applies a unary operation to a column. Strict mode may emit non-finite
/// values; they are reported by the caller, not raised here.
pub fn apply_unary(op: Operation, col: &[f64], mode: Mode) -> Vec<f64> {
    debug_assert!(!op.is_binary(), "{op} is binary");
    match op.kind() {
        OpKind::ColumnStatistical => {
            if mode == Mode::Strict && col.iter().any(|v| !v.is_finite()) {
                // Ranking would silently turn an invalid input into a valid one.
                return vec![f64::NAN; col.len()];
            }
            let out = match op {
                Quantile => quantile_transform(col),
                _ => minmax_scale(col),
            };
            match mode {
                Mode::Strict => out,
                Mode::Guarded => out.into_iter().map(clamp_finite).collect(),
            }
        }
        OpKind::Elementwise => col
            .iter()
            .map(|&x| {
                let v = unary_scalar(op, x, mode);
                match mode {
                    Mode::Strict => v,
                    Mode::Guarded => clamp_finite(v),
                }
            })
            .collect(),
    }
}

/// Applies a binary operation elementwise.
pub fn apply_binary(op: Operation, a: &[f64], b: &[f64], mode: Mode) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "{op} on columns of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let f = |x: f64, y: f64| match op {
        Plus => x + y,
        Subtract => x - y,
        Multiply => x * y,
        Divide => match mode {
            Mode::Guarded if y == 0.0 => x / GUARD_EPS,
            _ => x / y,
        },
        _ => unreachable!("{op} is not binary"),
    };
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| match mode {
            Mode::Strict => f(x, y),
            Mode::Guarded => clamp_finite(f(x, y)),
        })
        .collect())
}
