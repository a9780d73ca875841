use std::fmt;
use std::str::FromStr;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};

/// `theta <- theta - rate * grad` for every trainable parameter.
pub fn sgd_step(store: &mut ParamStore, rate: f64) {
    for p in store.iter_mut().filter(|p| p.trainable()) {
        let (value, grad) = p.value_and_grad_mut();
        for (w, g) in value.iter_mut().zip(grad) {
            *w -= rate * g;
        }
    }
}

/// Rescales all trainable gradients so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in store.iter_mut().filter(|p| p.trainable()) {
            for g in p.grad_mut() {
                *g *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecayMode {
    /// Adds `lambda * theta` to the gradient before the moment updates.
    CoupledL2,
    /// Shrinks `theta` by `rate * lambda * theta` outside the adaptive step.
    Decoupled,
}

impl fmt::Display for DecayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecayMode::CoupledL2 => "coupled",
            DecayMode::Decoupled => "decoupled",
        })
    }
}

impl FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(DecayMode::CoupledL2),
            "decoupled" => Ok(DecayMode::Decoupled),
            other => Err(Error::Parameter(format!("unknown decay mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub mode: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            mode: DecayMode::Decoupled,
        }
    }
}

/// Moment accumulators for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value().len()]).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable parameter.
    pub fn step(&mut self, store: &mut ParamStore, rate: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
            mode,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let shrink = 1.0 - rate * weight_decay;
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable() {
                continue;
            }
            let (value, grad) = p.value_and_grad_mut();
            if value.len() != m.len() {
                return Err(Error::Contract(format!(
                    "parameter `{}` changed shape under the optimizer",
                    p.name()
                )));
            }
            for i in 0..value.len() {
                let mut g = grad[i];
                match mode {
                    DecayMode::CoupledL2 => g += weight_decay * value[i],
                    DecayMode::Decoupled => value[i] *= shrink,
                }
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Plain SGD or Adam.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn adam(store: &ParamStore, config: AdamConfig) -> Self {
        Optimizer::Adam(AdamState::new(store, config))
    }

    pub fn step(&mut self, store: &mut ParamStore, rate: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => {
                sgd_step(store, rate);
                Ok(())
            }
            Optimizer::Adam(state) => state.step(store, rate),
        }
    }
}
