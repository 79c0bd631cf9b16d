//! Adam with bias correction and optional global-norm clipping.

use std::collections::BTreeMap;

use crate::mat::Mat;
use crate::params::{Grads, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled so their global L2 norm is at most this.
    pub clip_norm: Option<f64>,
    step: u64,
    first: BTreeMap<String, Mat>,
    second: BTreeMap<String, Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn with_clip_norm(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient entry are left
    /// alone. Returns the global gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> f64 {
        let norm = grads.values().map(Mat::sum_squares).sum::<f64>().sqrt();
        let scale = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(p.rows(), p.cols()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Mat::zeros(p.rows(), p.cols()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * scale;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Mat::scalar(w));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = single(0.75);
        let mut opt = Adam::new(0.1);
        let grads: Grads = [("w".to_string(), Mat::scalar(0.0))].into();
        for _ in 0..10 {
            opt.step(&mut p, &grads);
        }
        assert_eq!(p.get("w").unwrap().get(0, 0), 0.75);
    }

    #[test]
    fn minimises_a_parabola() {
        let mut p = single(1.0);
        let mut opt = Adam::new(0.01);
        let mut reached = None;
        for i in 0..500 {
            let w = p.get("w").unwrap().get(0, 0);
            if w.abs() < 1e-2 {
                reached = Some(i);
                break;
            }
            let grads: Grads = [("w".to_string(), Mat::scalar(2.0 * w))].into();
            opt.step(&mut p, &grads);
        }
        assert!(reached.is_some(), "w = {}", p.get("w").unwrap().get(0, 0));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = single(0.3);
            let mut opt = Adam::new(0.05).with_clip_norm(5.0);
            for i in 0..50 {
                let w = p.get("w").unwrap().get(0, 0);
                let grads: Grads = [("w".to_string(), Mat::scalar(w.sin() * i as f64))].into();
                opt.step(&mut p, &grads);
            }
            p.get("w").unwrap().get(0, 0).to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_bounds_the_first_step() {
        // With clipping, m_hat / sqrt(v_hat) is still ±1 on step one, so the
        // step is lr regardless of the raw gradient size.
        let mut p = single(0.0);
        let mut opt = Adam::new(0.1).with_clip_norm(5.0);
        let grads: Grads = [("w".to_string(), Mat::scalar(1e6))].into();
        let norm = opt.step(&mut p, &grads);
        assert_eq!(norm, 1e6);
        assert!((p.get("w").unwrap().get(0, 0) + 0.1).abs() < 1e-9);
    }
}
