//! AdamW with decoupled weight decay, global-norm clipping and a
//! warmup-then-cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Option<Mat>>,
    pub v: Vec<Option<Mat>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    /// One update. Parameters without a gradient this step are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step_scaled(store, grads, lr, &[]);
    }

    /// As [`AdamW::step`], with the learning rate of parameter `i` multiplied
    /// by `scale[i]` (1 where `scale` is short).
    pub fn step_scaled(&mut self, store: &mut ParamStore, grads: &Grads, base_lr: f64, scale: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let entry = store.entry(id);
            if !entry.trainable {
                continue;
            }
            let decay = entry.decay;
            let lr = base_lr * scale.get(id.0).copied().unwrap_or(1.0);
            let (r, c) = g.shape();
            let m = self.m[id.0].get_or_insert_with(|| Mat::zeros(r, c));
            let v = self.v[id.0].get_or_insert_with(|| Mat::zeros(r, c));
            let p = store.get_mut(id);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                if decay {
                    p.data[i] -= lr * self.weight_decay * p.data[i];
                }
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Rescale `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Linear warmup to `base`, then cosine decay to `floor · base` at `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, base: f64, floor: f64) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup.min(step)) as f64 / span as f64).min(1.0);
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (floor + (1.0 - floor) * cos)
}
