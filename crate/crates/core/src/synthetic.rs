//! Deterministic generators for the bundled datasets.
//!
//! `product_regression` has a known useful transformation (`y = f0·f1 +
//! noise`); `wine_like` is a 999×12 three-class table shaped like the red
//! wine quality data, used when the real file is unavailable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};

use crate::data::{Dataset, FeatureMatrix, Task};
use crate::error::Result;

/// `y = f0·f1 + N(0, 0.1²)` with five differently distributed features,
/// of which only f0 and f1 matter.
pub fn product_regression(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("valid");
    let exp = Exp::new(1.0).expect("valid");
    let shifted = Normal::new(3.0, 0.5).expect("valid");
    let noise = Normal::new(0.0, 0.1).expect("valid");
    let mut cols = vec![Vec::with_capacity(n); 5];
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let f0 = normal.sample(&mut rng);
        let f1 = rng.random_range(-2.0..2.0);
        let f2 = exp.sample(&mut rng);
        let f3 = shifted.sample(&mut rng);
        let f4 = rng.random_range(0.0..1.0);
        for (c, v) in cols.iter_mut().zip([f0, f1, f2, f3, f4]) {
            c.push(v);
        }
        y.push(f0 * f1 + noise.sample(&mut rng));
    }
    Dataset::new(
        FeatureMatrix::from_columns(cols)?,
        y,
        Task::Regression,
        (0..5).map(|i| format!("f{i}")).collect(),
        "y".into(),
    )
}

pub const WINE_FEATURES: [&str; 12] = [
    "fixed_acidity",
    "volatile_acidity",
    "citric_acid",
    "residual_sugar",
    "chlorides",
    "free_sulfur_dioxide",
    "total_sulfur_dioxide",
    "density",
    "ph",
    "sulphates",
    "alcohol",
    "tartaric_ratio",
];

/// Three ordinal quality classes driven by alcohol, volatile acidity,
/// log-sulphates and an alcohol × sulphates interaction.
pub fn wine_like(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std: Normal<f64> = Normal::new(0.0, 1.0).expect("valid");
    let lognormal = |mu: f64, sigma: f64| LogNormal::new(mu, sigma).expect("valid");
    let sugar = lognormal(0.8, 0.45);
    let chlorides = lognormal(-2.55, 0.3);
    let free_so2 = lognormal(2.6, 0.55);
    let sulphates = lognormal(-0.45, 0.2);
    let mut rows = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let fixed = 8.3 + 1.7 * std.sample(&mut rng);
        let volatile = (0.53 + 0.18 * std.sample(&mut rng)).max(0.12);
        let citric = (0.27 + 0.19 * std.sample(&mut rng) + 0.04 * (fixed - 8.3)).clamp(0.0, 1.0);
        let sugar = sugar.sample(&mut rng);
        let chl = chlorides.sample(&mut rng);
        let free = free_so2.sample(&mut rng);
        let total = free * (2.0 + rng.random_range(0.0..2.0));
        let alcohol = (10.4 + 1.05 * std.sample(&mut rng)).max(8.4);
        let density = 0.9967 + 0.0006 * (fixed - 8.3) - 0.0007 * (alcohol - 10.4) + 0.0004 * (sugar - 2.5);
        let ph = 3.31 - 0.06 * (fixed - 8.3) + 0.12 * std.sample(&mut rng);
        let sul = sulphates.sample(&mut rng);
        let tartaric = fixed / (fixed + 10.0 * citric + 1.0);
        let score = 0.9 * (alcohol - 10.4)
            - 2.6 * (volatile - 0.53)
            + 1.3 * (sul / 0.65).ln()
            + 0.6 * (alcohol - 10.4) * (sul - 0.65) / 0.15
            - 0.004 * (total - 46.0)
            + 0.55 * std.sample(&mut rng);
        rows.push(vec![
            fixed, volatile, citric, sugar, chl, free, total, density, ph, sul, alcohol, tartaric,
        ]);
        latent.push(score);
    }
    let mut sorted = latent.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[(n as f64 * 0.45) as usize];
    let hi = sorted[(n as f64 * 0.85) as usize];
    let y = latent
        .iter()
        .map(|&s| if s < lo { 0.0 } else if s < hi { 1.0 } else { 2.0 })
        .collect();
    Dataset::new(
        FeatureMatrix::from_rows(&rows)?,
        y,
        Task::Classification,
        WINE_FEATURES.iter().map(|s| s.to_string()).collect(),
        "quality".into(),
    )
}
