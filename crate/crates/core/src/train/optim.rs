//! Adam with decoupled weight decay, and a warmup + cosine learning-rate
//! schedule.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::autodiff::{Gradients, ParamId, ParamSet};

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter that has a gradient, with the
    /// learning rate returned by `lr_of`. Decay is applied as
    /// `p ← p − lr·wd·p`, separately from the adaptive step.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr_of: impl Fn(ParamId) -> f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut ids: Vec<(ParamId, &crate::autodiff::Tensor)> = grads.params().collect();
        ids.sort_by_key(|(id, _)| id.index());
        for (id, grad) in ids {
            if !params.is_trainable(id) {
                continue;
            }
            let lr = lr_of(id);
            let n = grad.numel();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let value = params.value_mut(id).data_mut();
            for i in 0..n {
                let g = grad.data()[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                let p = value[i] as f64;
                value[i] = (p - lr * (update + self.weight_decay * p)) as f32;
            }
        }
    }
}

/// Linear warmup over `warmup` steps, then cosine decay to zero at `total`.
/// Returns the multiplier applied to the base learning rate before step
/// `step` (counted from 0).
pub fn lr_factor(step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        return (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    0.5 * (1.0 + (PI * progress).cos())
}
