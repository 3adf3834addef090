use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;

/// Learning rate for 1-based step `t` of `total`: linear warmup over
/// `warmup` steps, then cosine annealing to 0 at `t = total`.
pub fn cosine_lr(base: f64, t: usize, total: usize, warmup: usize) -> f64 {
    if total == 0 {
        return base;
    }
    if warmup > 0 && t <= warmup {
        return base * t as f64 / warmup as f64;
    }
    let span = (total - warmup.min(total)) as f64;
    let x = ((t - warmup) as f64 / span).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    /// Number of steps taken.
    pub t: u64,
}

impl AdamW {
    pub fn new(shapes: &[Mat], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Mat> = shapes.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update: `p -= lr * wd * p`, then the bias-corrected moment step.
    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter / gradient count");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.data.len(), g.data.len(), "gradient shape");
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * self.weight_decay * p.data[i];
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Plain gradient descent with the same decoupled decay; its fixed point
/// is the ridge solution of a quadratic objective.
pub fn sgd_step(params: &mut [Mat], grads: &[Mat], lr: f64, weight_decay: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for (x, d) in p.data.iter_mut().zip(&g.data) {
            *x -= lr * (d + weight_decay * *x);
        }
    }
}
