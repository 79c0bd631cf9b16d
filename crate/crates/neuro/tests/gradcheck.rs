//! Central finite-difference checks for every differentiable tape op.

use featsearch_neuro::layers::lstm_step;
use featsearch_neuro::{Graph, Mat, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const CONFIGS: u64 = 12;

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Mat::from_vec(rows, cols, data).unwrap()
}

/// Builds `loss = mse(f(inputs), target)` and compares the tape gradient of
/// every input with central differences. Returns the worst relative error
/// (vector-norm relative error per input).
fn check<F>(inputs: &[Mat], target: &Mat, f: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let loss_of = |vals: &[Mat]| {
        let mut g = Graph::new();
        let ids: Vec<_> = vals.iter().map(|m| g.leaf(m.clone())).collect();
        let out = f(&mut g, &ids);
        let loss = if g.value(out).shape() == (1, 1) && target.shape() == (0, 0) {
            out
        } else {
            g.mse(out, target).unwrap()
        };
        (g, ids, loss)
    };
    let (mut g, ids, loss) = loss_of(inputs);
    g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = g
            .grad(*id)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(inputs[k].rows(), inputs[k].cols()));
        let mut numeric = Mat::zeros(inputs[k].rows(), inputs[k].cols());
        for j in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            let (gp, _, lp) = loss_of(&plus);
            let (gm, _, lm) = loss_of(&minus);
            numeric.data_mut()[j] = (gp.value(lp).get(0, 0) - gm.value(lm).get(0, 0)) / (2.0 * H);
        }
        let diff = analytic.zip_map(&numeric, |a, b| a - b).sum_squares().sqrt();
        let scale = analytic.sum_squares().sqrt() + numeric.sum_squares().sqrt();
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

fn run<F>(name: &str, mut case: F)
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    let mut worst: f64 = 0.0;
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + name.len() as u64);
        worst = worst.max(case(&mut rng));
    }
    assert!(worst <= TOL, "{name}: relative error {worst:e}");
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..5))
}

#[test]
fn matmul() {
    run("matmul", |rng| {
        let (m, k, n) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, k), random_mat(rng, k, n)], &t, |g, x| {
            g.matmul(x[0], x[1]).unwrap()
        })
    });
}

#[test]
fn matmul_with_itself() {
    run("matmul_self", |rng| {
        let n = rng.random_range(1..5);
        let t = random_mat(rng, n, n);
        check(&[random_mat(rng, n, n)], &t, |g, x| g.matmul(x[0], x[0]).unwrap())
    });
}

#[test]
fn add_and_bias() {
    run("add", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n), random_mat(rng, m, n)], &t, |g, x| {
            g.add(x[0], x[1]).unwrap()
        })
    });
    run("add_bias", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n), random_mat(rng, 1, n)], &t, |g, x| {
            g.add_bias(x[0], x[1]).unwrap()
        })
    });
}

#[test]
fn elementwise() {
    run("mul", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n), random_mat(rng, m, n)], &t, |g, x| {
            g.mul(x[0], x[1]).unwrap()
        })
    });
    run("scale", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        let k = rng.random_range(-3.0..3.0);
        check(&[random_mat(rng, m, n)], &t, |g, x| g.scale(x[0], k))
    });
    run("tanh", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n)], &t, |g, x| g.tanh(x[0]))
    });
    run("sigmoid", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n)], &t, |g, x| g.sigmoid(x[0]))
    });
    run("relu", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n)], &t, |g, x| g.relu(x[0]))
    });
}

#[test]
fn shape_ops() {
    run("concat", |rng| {
        let (m, a, b) = dims(rng);
        let t = random_mat(rng, m, a + b);
        check(&[random_mat(rng, m, a), random_mat(rng, m, b)], &t, |g, x| {
            g.concat(x[0], x[1]).unwrap()
        })
    });
    run("slice_cols", |rng| {
        let (m, n, _) = dims(rng);
        let n = n + 2;
        let s = rng.random_range(0..n - 1);
        let e = rng.random_range(s + 1..=n);
        let t = random_mat(rng, m, e - s);
        check(&[random_mat(rng, m, n)], &t, |g, x| g.slice_cols(x[0], s, e).unwrap())
    });
    run("gather", |rng| {
        let (v, k, b) = dims(rng);
        let idx: Vec<usize> = (0..b + 1).map(|_| rng.random_range(0..v)).collect();
        let t = random_mat(rng, idx.len(), k);
        check(&[random_mat(rng, v, k)], &t, |g, x| g.gather(x[0], &idx).unwrap())
    });
    run("broadcast_rows", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, 1, n)], &t, |g, x| g.broadcast_rows(x[0], m).unwrap())
    });
    run("mean_rows", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, 1, n);
        check(&[random_mat(rng, m, n)], &t, |g, x| g.mean_rows(x[0]))
    });
}

#[test]
fn weighted_sum() {
    run("weighted_sum", |rng| {
        let (b, d, steps) = dims(rng);
        let w = random_mat(rng, b, steps);
        let inputs: Vec<Mat> = (0..steps).map(|_| random_mat(rng, b, d)).collect();
        let t = random_mat(rng, b, d);
        check(&inputs, &t, |g, x| g.weighted_sum(x, &w).unwrap())
    });
}

#[test]
fn attention() {
    run("attention", |rng| {
        let (b, d, steps) = dims(rng);
        let mut inputs: Vec<Mat> = (0..steps).map(|_| random_mat(rng, b, d)).collect();
        inputs.push(random_mat(rng, b, d));
        let mut mask = Mat::filled(b, steps, 1.0);
        for r in 0..b {
            // keep position 0 so every row attends to something
            for t in 1..steps {
                if rng.random_bool(0.3) {
                    mask.set(r, t, 0.0);
                }
            }
        }
        let t = random_mat(rng, b, d);
        check(&inputs, &t, |g, x| {
            let (keys, q) = x.split_at(steps);
            g.attention(keys, q[0], Some(&mask)).unwrap()
        })
    });
}

#[test]
fn losses() {
    run("softmax_cross_entropy", |rng| {
        let (b, c, _) = dims(rng);
        let c = c + 1;
        let targets: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let weights: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
        check(&[random_mat(rng, b, c)], &Mat::zeros(0, 0), |g, x| {
            g.softmax_cross_entropy(x[0], &targets, &weights).unwrap()
        })
    });
    run("mse", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n)], &t, |_, x| x[0])
    });
}

#[test]
fn lstm_cell() {
    run("lstm_step", |rng| {
        let (b, input, hidden) = dims(rng);
        let inputs = [
            random_mat(rng, input + hidden, 4 * hidden),
            random_mat(rng, 1, 4 * hidden),
            random_mat(rng, b, input),
            random_mat(rng, b, hidden),
            random_mat(rng, b, hidden),
        ];
        let t = random_mat(rng, b, 2 * hidden);
        check(&inputs, &t, |g, x| {
            let (h, c) = lstm_step(g, x[0], x[1], x[2], x[3], x[4]).unwrap();
            g.concat(h, c).unwrap()
        })
    });
}

#[test]
fn lstm_unrolled_three_steps() {
    run("lstm_unroll", |rng| {
        let (b, input, hidden) = dims(rng);
        let mut inputs = vec![
            random_mat(rng, input + hidden, 4 * hidden),
            random_mat(rng, 1, 4 * hidden),
        ];
        for _ in 0..3 {
            inputs.push(random_mat(rng, b, input));
        }
        let t = random_mat(rng, b, hidden);
        check(&inputs, &t, |g, x| {
            let mut h = g.leaf(Mat::zeros(b, hidden));
            let mut c = g.leaf(Mat::zeros(b, hidden));
            for step in 0..3 {
                (h, c) = lstm_step(g, x[0], x[1], x[2 + step], h, c).unwrap();
            }
            h
        })
    });
}

#[test]
fn diamond_graph_with_shared_subexpressions() {
    run("diamond", |rng| {
        let (m, n, _) = dims(rng);
        let t = random_mat(rng, m, n);
        check(&[random_mat(rng, m, n), random_mat(rng, m, n)], &t, |g, x| {
            let s = g.add(x[0], x[1]).unwrap();
            let a = g.tanh(s);
            let b = g.sigmoid(s);
            let ab = g.mul(a, b).unwrap();
            let again = g.mul(ab, x[0]).unwrap();
            g.add(again, s).unwrap()
        })
    });
}
