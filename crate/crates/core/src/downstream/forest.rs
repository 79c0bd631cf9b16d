//! Bagged CART ensemble. Tree `i` draws its bootstrap sample and feature
//! subsets from its own stream seeded by `derive_seed(seed, i)`, so the
//! result does not depend on how trees are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::derive_seed;
use super::tree::{DecisionTree, Target, TreeParams};

#[derive(Clone, Debug, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    width: usize,
}

impl RandomForest {
    pub fn fit(columns: &[Vec<f64>], rows: &[usize], target: Target<'_>, params: &ForestParams, seed: u64) -> Self {
        let trees = (0..params.n_trees.max(1))
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                let sample: Vec<usize> = if params.bootstrap {
                    (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())]).collect()
                } else {
                    rows.to_vec()
                };
                DecisionTree::fit(columns, &sample, target, &params.tree, &mut rng)
            })
            .collect();
        Self {
            trees,
            width: target.width(),
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Mean of the trees' leaf vectors.
    pub fn predict_with(&self, value: impl Fn(usize) -> f64 + Copy) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.predict_with(value)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}
