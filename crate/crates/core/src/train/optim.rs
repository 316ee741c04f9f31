use super::config::{OptimizerConfig, OptimizerKind};
use crate::model::{Param, Scalar};

/// Per-parameter optimizer state; only trainable tensors are updated.
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    cfg: OptimizerConfig,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(cfg: OptimizerConfig, params: &[Param<S>]) -> Self {
        let zeros = || params.iter().map(|p| vec![S::zero(); p.values.len()]).collect();
        let second = if cfg.kind == OptimizerKind::Adam { zeros() } else { Vec::new() };
        Self {
            cfg,
            first: zeros(),
            second,
            step: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &mut [Param<S>]) {
        self.step += 1;
        let c = self.cfg;
        let lr = S::lit(c.learning_rate);
        match c.kind {
            OptimizerKind::Sgd => {
                let mom = S::lit(c.momentum);
                for (p, vel) in params.iter_mut().zip(&mut self.first) {
                    if !p.trainable {
                        continue;
                    }
                    for ((w, g), v) in p.values.iter_mut().zip(&p.grads).zip(vel.iter_mut()) {
                        *v = mom * *v - lr * *g;
                        *w += *v;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
                let t = self.step as i32;
                let c1 = S::lit(1.0 - c.beta1.powi(t));
                let c2 = S::lit(1.0 - c.beta2.powi(t));
                let eps = S::lit(c.epsilon);
                let one = S::one();
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    if !p.trainable {
                        continue;
                    }
                    for (((w, g), m), v) in p.values.iter_mut().zip(&p.grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (one - b1) * *g;
                        *v = b2 * *v + (one - b2) * *g * *g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
