use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

/// Constant learning rate, then exponential decay between two steps, then a floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub decay_start_step: u64,
    pub decay_end_step: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            min_lr: 1e-5,
            decay_start_step: 50_000,
            decay_end_step: 200_000,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step <= self.decay_start_step {
            return self.base_lr;
        }
        if step >= self.decay_end_step {
            return self.min_lr;
        }
        let span = (self.decay_end_step - self.decay_start_step) as f64;
        let frac = (step - self.decay_start_step) as f64 / span;
        self.base_lr * (self.min_lr / self.base_lr).powf(frac)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule: LrSchedule::default(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            errs.push(format!("adam_beta1 must be in (0, 1), got {}", self.beta1));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            errs.push(format!("adam_beta2 must be in (0, 1), got {}", self.beta2));
        }
        if !(self.epsilon > 0.0) {
            errs.push(format!("adam_epsilon must be > 0, got {}", self.epsilon));
        }
        let s = &self.schedule;
        if !(s.base_lr > 0.0) {
            errs.push(format!("base_lr must be > 0, got {}", s.base_lr));
        }
        if !(s.min_lr > 0.0 && s.min_lr <= s.base_lr) {
            errs.push(format!(
                "min_lr must be in (0, base_lr], got {} (base_lr {})",
                s.min_lr, s.base_lr
            ));
        }
        if s.decay_end_step < s.decay_start_step {
            errs.push(format!(
                "decay_end_step {} precedes decay_start_step {}",
                s.decay_end_step, s.decay_start_step
            ));
        }
        errs
    }
}

/// First/second moments for every parameter of one store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected Adam update at the learning rate scheduled for
    /// `global_step`. Trainable parameters must carry a gradient; frozen ones
    /// are skipped. Gradients are cleared afterwards. Returns the rate used.
    pub fn step(&mut self, store: &mut ParamStore, global_step: u64) -> Result<f64> {
        for (_, p) in store.iter() {
            if p.tensor.requires_grad() && p.tensor.grad().is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        let lr = self.config.schedule.lr(global_step);
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.tensor.requires_grad() {
                p.tensor.clear_grad();
                continue;
            }
            let g = p.tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = p.tensor.data_mut();
            for j in 0..w.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
            p.tensor.clear_grad();
        }
        Ok(lr)
    }
}

/// Loss-side L2 penalty `weight/2·‖θ‖²`: adds `weight·θ` to each trainable gradient.
pub fn add_l2_regularization(store: &mut ParamStore, weight: f64) {
    if weight == 0.0 {
        return;
    }
    for p in store.iter_mut() {
        if !p.tensor.requires_grad() {
            continue;
        }
        let w = p.tensor.data().to_vec();
        if let Some(g) = p.tensor.grad_mut() {
            g.iter_mut().zip(&w).for_each(|(g, w)| *g += weight * w);
        }
    }
}

pub fn grad_norm(store: &ParamStore) -> f64 {
    store
        .iter()
        .filter_map(|(_, p)| p.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in store.iter_mut() {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}
