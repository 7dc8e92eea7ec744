use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cosine annealing with warm restarts. Time is measured in (fractional) epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the first cycle in epochs.
    pub t0: f64,
    /// Cycle length multiplier applied at each restart.
    pub t_mult: f64,
}

impl CosineWarmRestarts {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(
                "learning rates must satisfy 0 <= lr_min <= lr".into(),
            ));
        }
        if !(self.t0 > 0.0 && self.t_mult >= 1.0) {
            return Err(Error::Config(
                "schedule needs t0 > 0 and t_mult >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Rate at position `t_cur` of a cycle of length `t_i`.
    pub fn lr_in_cycle(&self, t_cur: f64, t_i: f64) -> f64 {
        self.lr_min
            + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos())
    }

    /// `(t_cur, t_i)` at epoch time `t`.
    pub fn cycle_position(&self, t: f64) -> (f64, f64) {
        let t = t.max(0.0);
        if self.t_mult == 1.0 {
            return (t % self.t0, self.t0);
        }
        let n = ((t / self.t0 * (self.t_mult - 1.0) + 1.0).ln() / self.t_mult.ln()).floor();
        let start = self.t0 * (self.t_mult.powf(n) - 1.0) / (self.t_mult - 1.0);
        let t_i = self.t0 * self.t_mult.powf(n);
        // Guard the boundary against rounding in the log.
        if t - start >= t_i {
            (t - start - t_i, t_i * self.t_mult)
        } else if t < start {
            let t_prev = t_i / self.t_mult;
            (t - (start - t_prev), t_prev)
        } else {
            (t - start, t_i)
        }
    }

    pub fn lr_at(&self, t: f64) -> f64 {
        let (t_cur, t_i) = self.cycle_position(t);
        self.lr_in_cycle(t_cur, t_i)
    }
}

/// SGD with Nesterov momentum in the `v ← μv + g; p ← p − lr(g + μv)` form.
#[derive(Debug, Clone, PartialEq)]
pub struct NesterovSgd {
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl NesterovSgd {
    pub fn new(n_params: usize, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; n_params],
        }
    }

    /// Updates `params` where `trainable` is true; other entries are untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, trainable: &[bool]) {
        let mu = self.momentum;
        for (((p, &g), v), &t) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.velocity)
            .zip(trainable)
        {
            if t {
                *v = mu * *v + g;
                *p -= lr * (g + mu * *v);
            }
        }
    }
}
