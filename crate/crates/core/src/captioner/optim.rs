use serde::{Deserialize, Serialize};

use crate::params::Parameters;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clipping threshold; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: OptimizerConfig,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: OptimizerConfig, num_params: usize) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            t: 0,
        }
    }

    /// Rescales `grad` in place so its global L2 norm is at most the clip
    /// threshold. Returns the norm before clipping.
    pub fn clip(&self, grad: &mut [T]) -> T {
        let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
        let limit = T::lit(self.cfg.clip_norm);
        if self.cfg.clip_norm > 0.0 && norm > limit {
            let s = limit / norm;
            grad.iter_mut().for_each(|g| *g = *g * s);
        }
        norm
    }

    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grad: &[T]) {
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let one = T::one();
        let lr = T::lit(self.cfg.learning_rate);
        let eps = T::lit(self.cfg.epsilon);
        let c1 = one - b1.powi(self.t);
        let c2 = one - b2.powi(self.t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut at = 0;
        params.for_each_mut("", &mut |_, values| {
            for p in values.iter_mut() {
                let g = grad[at];
                m[at] = b1 * m[at] + (one - b1) * g;
                v[at] = b2 * v[at] + (one - b2) * g * g;
                let mhat = m[at] / c1;
                let vhat = v[at] / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
                at += 1;
            }
        });
    }
}
