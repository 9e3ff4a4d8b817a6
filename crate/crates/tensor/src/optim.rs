//! Optimizers and learning-rate schedules.

use crate::params::{GradBuffer, ParamStore};
use crate::tensor::Tensor;

/// Warmup followed by inverse-square-root decay:
/// `lr(step) = base · d_model^(-1/2) · min(step^(-1/2), step · warmup^(-3/2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoamSchedule {
    pub base: f64,
    pub d_model: usize,
    pub warmup: u64,
}

impl NoamSchedule {
    pub fn new(base: f64, d_model: usize, warmup: u64) -> Self {
        Self { base, d_model, warmup }
    }

    /// Learning rate for a 1-based optimizer step.
    pub fn lr(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.base * (self.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.998,
            eps: 1e-9,
        }
    }
}

/// Adam with bias correction. Moment tensors mirror the parameter store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros_like(t)).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Restore from saved moments.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        assert_eq!(m.len(), v.len());
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Apply one update with learning rate `lr`, then zero `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &mut GradBuffer, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        grads.zero();
    }
}

/// Adagrad with a configurable initial accumulator value.
#[derive(Clone, Debug)]
pub struct Adagrad {
    pub lr: f64,
    pub eps: f64,
    acc: Vec<Tensor>,
}

impl Adagrad {
    pub fn new(store: &ParamStore, lr: f64, initial_accumulator: f64) -> Self {
        Self {
            lr,
            eps: 1e-10,
            acc: store
                .iter()
                .map(|(_, _, t)| {
                    let mut z = Tensor::zeros_like(t);
                    z.fill(initial_accumulator);
                    z
                })
                .collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &mut GradBuffer) {
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let a = self.acc[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                a[i] += g[i] * g[i];
                p[i] -= self.lr * g[i] / (a[i].sqrt() + self.eps);
            }
        }
        grads.zero();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_shape_and_knee() {
        let s = NoamSchedule::new(2.0, 256, 8000);
        for step in 1..8000u64 {
            assert!(s.lr(step + 1) > s.lr(step), "not increasing at {step}");
        }
        for step in (8000..20000u64).step_by(7) {
            assert!(s.lr(step + 1) < s.lr(step), "not decreasing at {step}");
        }
        let knee = 2.0 * 256f64.powf(-0.5) * 8000f64.powf(-0.5);
        assert!((s.lr(8000) - knee).abs() < 1e-18);
    }

    #[test]
    fn adam_two_steps_match_hand_recursion() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(&store, cfg);
        let mut grads = GradBuffer::new(&store);
        let lr = 0.1;

        // Hand recursion for g = 1 on both steps.
        let (b1, b2, eps) = (0.9f64, 0.998f64, 1e-9);
        let mut w = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        for _ in 0..2 {
            grads.add_scaled(id, &Tensor::scalar(1.0), 1.0);
            opt.step(&mut store, &mut grads, lr);
            assert_eq!(grads.get(id).item(), 0.0, "grads zeroed after step");
        }
        assert_eq!(opt.step_count(), 2);
        assert!((store.get(id).item() - w).abs() < 1e-15);
        // With a constant gradient each bias-corrected step moves by ~lr.
        assert!((store.get(id).item() - (1.0 - 2.0 * lr)).abs() < 1e-8);
    }

    #[test]
    fn adagrad_first_step() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let mut opt = Adagrad::new(&store, 0.15, 0.0);
        let mut grads = GradBuffer::new(&store);
        grads.add_scaled(id, &Tensor::scalar(2.0), 1.0);
        opt.step(&mut store, &mut grads);
        assert!((store.get(id).item() + 0.15).abs() < 1e-9);
    }
}
