//! Gradient descent steppers over flat parameter vectors. Plain SGD and Adam with
//! explicit bias correction; both mutate the parameter slice in place.

use crate::error::{BivError, Result};

/// Fixed-rate stochastic gradient descent.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(BivError::config(format!(
                "sgd: learning rate must be positive, got {lr}"
            )));
        }
        Ok(Sgd { lr })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(BivError::Shape(format!(
                "sgd: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, &g) in params.iter_mut().zip(grads) {
            *p -= self.lr * g;
        }
        Ok(())
    }
}

/// Adam hyperparameters. Defaults follow common practice: lr 0.001, beta1 0.9,
/// beta2 0.999, eps_hat 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(BivError::config(format!(
                "adam: learning rate must be positive, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(BivError::config(format!(
                    "adam: {name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps_hat > 0.0) {
            return Err(BivError::config(format!(
                "adam: eps_hat must be positive, got {}",
                self.eps_hat
            )));
        }
        Ok(())
    }
}

/// Adam with per-coordinate first and second moment estimates. The update is kept
/// unfused: at step t, m_hat = m/(1-beta1^t), v_hat = v/(1-beta2^t), and the
/// parameter moves by -lr * m_hat / (sqrt(v_hat) + eps_hat). At t = 1 this
/// collapses to -lr * g / (|g| + eps_hat) whatever the gradient scale.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(dim: usize, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(BivError::Shape(format!(
                "adam: state dim {} vs {} parameters, {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps_hat,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps_hat);
        }
        Ok(())
    }
}
