//! Adam with decoupled weight decay, and patience-based early stopping.

use serde::{Deserialize, Serialize};

use crate::encoder::{Dims, EncoderParams};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    t: i32,
    m: EncoderParams,
    v: EncoderParams,
}

impl Adam {
    pub fn new(dims: Dims, learning_rate: f64, weight_decay: f64) -> Self {
        Adam {
            learning_rate,
            weight_decay,
            t: 0,
            m: EncoderParams::zeros(dims),
            v: EncoderParams::zeros(dims),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Advances the moment estimates with `grad` and returns the update
    /// direction `m̂ / (√v̂ + ε) + λ·θ`. The caller subtracts `lr` times it.
    pub fn direction(&mut self, params: &EncoderParams, grad: &EncoderParams) -> EncoderParams {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let mut dir = EncoderParams::zeros(params.dims);
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        let ds = dir.slices_mut();
        for ((((m, v), d), g), p) in ms.into_iter().zip(vs).zip(ds).zip(grad.slices()).zip(params.slices()) {
            for i in 0..g.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                d[i] = m_hat / (v_hat.sqrt() + EPSILON) + self.weight_decay * p[i];
            }
        }
        dir
    }

    pub fn step(&mut self, params: &mut EncoderParams, grad: &EncoderParams) {
        let dir = self.direction(params, grad);
        let lr = self.learning_rate;
        for (p, d) in params.slices_mut().into_iter().zip(dir.slices()) {
            for (x, y) in p.iter_mut().zip(d) {
                *x -= lr * y;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    higher_is_better: bool,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        EarlyStopping {
            patience,
            higher_is_better,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> Verdict {
        let better = match self.best {
            None => true,
            Some(b) if self.higher_is_better => metric > b,
            Some(b) => metric < b,
        };
        if better {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
