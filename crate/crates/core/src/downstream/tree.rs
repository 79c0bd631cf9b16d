//! CART decision tree: Gini splits for classes, variance reduction for
//! real targets. Leaves store class probabilities or the mean target.

use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

impl Target<'_> {
    /// Width of a prediction: number of classes, or 1 for regression.
    pub fn width(&self) -> usize {
        match self {
            Target::Classes { n_classes, .. } => *n_classes,
            Target::Values(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 10,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct Builder<'a, R> {
    columns: &'a [Vec<f64>],
    target: Target<'a>,
    params: &'a TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl DecisionTree {
    /// Fits on `rows` of the column-major `columns`. Rows may repeat
    /// (bootstrap samples). The rng is used only for feature subsampling.
    pub fn fit<R: Rng>(
        columns: &[Vec<f64>],
        rows: &[usize],
        target: Target<'_>,
        params: &TreeParams,
        rng: &mut R,
    ) -> Self {
        assert!(!rows.is_empty(), "cannot fit a tree on zero rows");
        let mut b = Builder {
            columns,
            target,
            params,
            rng,
            nodes: Vec::new(),
        };
        b.build(rows.to_vec(), 0);
        Self { nodes: b.nodes }
    }

    /// Class probabilities or `[mean]` for one sample.
    pub fn predict_with(&self, value: impl Fn(usize) -> f64) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if value(*feature) <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        self.predict_with(|f| row[f])
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.leaf_value(&rows)));
        let min_leaf = self.params.min_samples_leaf.max(1);
        if depth >= self.params.max_depth || rows.len() < 2 * min_leaf || self.is_pure(&rows) {
            return id;
        }
        let Some(split) = self.best_split(&rows) else {
            return id;
        };
        let col = &self.columns[split.feature];
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    fn leaf_value(&self, rows: &[usize]) -> Vec<f64> {
        match self.target {
            Target::Classes { labels, n_classes } => {
                let mut p = vec![0.0; n_classes];
                for &i in rows {
                    p[labels[i]] += 1.0;
                }
                let n = rows.len() as f64;
                p.iter_mut().for_each(|v| *v /= n);
                p
            }
            Target::Values(y) => vec![rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64],
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self.target {
            Target::Classes { labels, .. } => rows.iter().all(|&i| labels[i] == labels[rows[0]]),
            Target::Values(y) => rows.iter().all(|&i| y[i] == y[rows[0]]),
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.columns.len();
        match self.params.max_features {
            Some(m) if m < p => rand::seq::index::sample(self.rng, p, m.max(1)).into_vec(),
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<Split> {
        let mut best: Option<Split> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in self.candidate_features() {
            let col = &self.columns[f];
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (col[i], i)));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            let found = match self.target {
                Target::Classes { labels, n_classes } => {
                    scan_classes(&sorted, labels, n_classes, self.params.min_samples_leaf)
                }
                Target::Values(y) => scan_values(&sorted, y, self.params.min_samples_leaf),
            };
            if let Some((threshold, gain)) = found {
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Split {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Scans sorted `(value, row)` pairs for the Gini-optimal threshold.
/// Maximizes Σ l_k²/n_l + Σ r_k²/n_r, which is equivalent to minimizing the
/// weighted child Gini impurity. Returns `(threshold, gain over parent)`.
fn scan_classes(
    sorted: &[(f64, usize)],
    labels: &[usize],
    n_classes: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let n = sorted.len();
    let min_leaf = min_leaf.max(1);
    let mut right = vec![0usize; n_classes];
    for &(_, i) in sorted {
        right[labels[i]] += 1;
    }
    let mut left = vec![0usize; n_classes];
    let mut lsq = 0usize;
    let mut rsq: usize = right.iter().map(|c| c * c).sum();
    let parent = rsq as f64 / n as f64;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        let c = labels[sorted[k].1];
        lsq += 2 * left[c] + 1;
        left[c] += 1;
        rsq -= 2 * right[c] - 1;
        right[c] -= 1;
        let nl = k + 1;
        let nr = n - nl;
        if nl < min_leaf {
            continue;
        }
        if nr < min_leaf {
            break;
        }
        if sorted[k].0 == sorted[k + 1].0 {
            continue;
        }
        let gain = lsq as f64 / nl as f64 + rsq as f64 / nr as f64 - parent;
        if gain > 1e-12 && best.is_none_or(|(_, g)| gain > g) {
            best = Some((midpoint(sorted[k].0, sorted[k + 1].0), gain));
        }
    }
    best
}

/// Variance-reduction scan: maximizes s_l²/n_l + s_r²/n_r.
fn scan_values(sorted: &[(f64, usize)], y: &[f64], min_leaf: usize) -> Option<(f64, f64)> {
    let n = sorted.len();
    let min_leaf = min_leaf.max(1);
    let total: f64 = sorted.iter().map(|&(_, i)| y[i]).sum();
    let parent = total * total / n as f64;
    let scale: f64 = sorted.iter().map(|&(_, i)| y[i] * y[i]).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut sl = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        sl += y[sorted[k].1];
        let nl = k + 1;
        let nr = n - nl;
        if nl < min_leaf {
            continue;
        }
        if nr < min_leaf {
            break;
        }
        if sorted[k].0 == sorted[k + 1].0 {
            continue;
        }
        let sr = total - sl;
        let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
        if gain > 1e-12 * scale && best.is_none_or(|(_, g)| gain > g) {
            best = Some((midpoint(sorted[k].0, sorted[k + 1].0), gain));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn separates_a_threshold() {
        let x = vec![vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0]];
        let labels = [0, 0, 0, 1, 1, 1];
        let rows: Vec<usize> = (0..6).collect();
        let t = DecisionTree::fit(
            &x,
            &rows,
            Target::Classes { labels: &labels, n_classes: 2 },
            &TreeParams::default(),
            &mut rng(),
        );
        assert_eq!(t.n_nodes(), 3);
        assert_eq!(t.predict_row(&[6.5]), &[1.0, 0.0]);
        assert_eq!(t.predict_row(&[6.6]), &[0.0, 1.0]);
    }

    #[test]
    fn gini_split_matches_brute_force() {
        // brute force over all thresholds of the weighted child impurity
        let v = [0.3, 1.2, 0.7, 2.2, 1.9, 0.1, 1.5, 0.9];
        let labels = [0, 1, 0, 1, 1, 0, 2, 2];
        let mut sorted: Vec<(f64, usize)> = v.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let gini = |idx: &[usize]| {
            let mut c = [0.0; 3];
            idx.iter().for_each(|&i| c[labels[i]] += 1.0);
            let n = idx.len() as f64;
            1.0 - c.iter().map(|k| (k / n) * (k / n)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..v.len() - 1 {
            let l: Vec<usize> = sorted[..=k].iter().map(|p| p.1).collect();
            let r: Vec<usize> = sorted[k + 1..].iter().map(|p| p.1).collect();
            let w = l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r);
            if w < best.0 - 1e-12 {
                best = (w, (sorted[k].0 + sorted[k + 1].0) / 2.0);
            }
        }
        let (thr, _) = scan_classes(&sorted, &labels, 3, 1).unwrap();
        assert!((thr - best.1).abs() < 1e-12);
    }

    #[test]
    fn regression_tree_fits_a_step() {
        let x = vec![(0..20).map(f64::from).collect::<Vec<_>>()];
        let y: Vec<f64> = (0..20).map(|i| if i < 7 { -1.0 } else { 4.0 }).collect();
        let rows: Vec<usize> = (0..20).collect();
        let t = DecisionTree::fit(&x, &rows, Target::Values(&y), &TreeParams::default(), &mut rng());
        assert_eq!(t.depth(), 1);
        assert_eq!(t.predict_row(&[3.0]), &[-1.0]);
        assert_eq!(t.predict_row(&[15.0]), &[4.0]);
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let x = vec![(0..64).map(|i| f64::from(i * 7 % 64)).collect::<Vec<_>>()];
        let y: Vec<f64> = (0..64).map(|i| f64::from(i % 5)).collect();
        let rows: Vec<usize> = (0..64).collect();
        let p = TreeParams {
            max_depth: 3,
            min_samples_leaf: 5,
            max_features: None,
        };
        let t = DecisionTree::fit(&x, &rows, Target::Values(&y), &p, &mut rng());
        assert!(t.depth() <= 3);
        let p1 = TreeParams { max_depth: 0, ..p };
        assert_eq!(DecisionTree::fit(&x, &rows, Target::Values(&y), &p1, &mut rng()).n_nodes(), 1);
    }

    #[test]
    fn constant_features_give_a_leaf() {
        let x = vec![vec![1.0; 5]];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = DecisionTree::fit(&x, &[0, 1, 2, 3, 4], Target::Values(&y), &TreeParams::default(), &mut rng());
        assert_eq!(t.predict_row(&[1.0]), &[3.0]);
    }
}
