//! Adam with decoupled weight decay and a warmup/linear-decay schedule.

use std::collections::BTreeMap;

use crate::config::OptimizerConfig;
use crate::params::ModelParams;
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: OptimizerConfig,
    total_steps: usize,
    step: usize,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, total_steps: usize) -> Self {
        AdamW {
            cfg,
            total_steps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn warmup_steps(&self) -> usize {
        (self.cfg.warmup_proportion * self.total_steps as f64).ceil() as usize
    }

    /// Rate used by step `step` (0-based): rises linearly to `lr` over the
    /// warmup, then falls linearly to zero at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        if step < warm {
            self.cfg.lr * (step + 1) as f64 / warm as f64
        } else if self.total_steps > warm {
            self.cfg.lr * (self.total_steps - step.min(self.total_steps)) as f64
                / (self.total_steps - warm) as f64
        } else {
            self.cfg.lr
        }
    }

    /// Apply one update; returns the rate that was used. Matrices are
    /// decayed, vectors (biases, layer norm, `u`/`v`) are not. Moments stay
    /// in f64; f32 weights are rounded back after the update.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>) -> f64 {
        let lr = self.lr_at(self.step);
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let decay = if p.rank() >= 2 { c.weight_decay } else { 0.0 };
            let narrow = p.dtype() == DType::F32;
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + c.adam_eps);
                *w -= lr * (update + decay * *w);
                if narrow {
                    *w = *w as f32 as f64;
                }
            }
        }
        lr
    }
}
