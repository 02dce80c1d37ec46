use super::{init::round_to_f32, NetworkParams};
use crate::error::{Error, Result};

/// Plain minibatch SGD with step learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub base_lr: f64,
    /// Iterations between learning-rate drops.
    pub stepsize: u64,
    pub gamma: f64,
    pub batch: usize,
    pub max_iters: u64,
    pub seed: u64,
    /// Off (0.0) unless requested.
    pub momentum: f64,
    /// Off (0.0) unless requested.
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            stepsize: 50_000,
            gamma: 0.1,
            batch: 16,
            max_iters: 100_000,
            seed: 0,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::InvalidArgument("base_lr must be > 0".into()));
        }
        if self.stepsize == 0 {
            return Err(Error::InvalidArgument("stepsize must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1]".into()));
        }
        if self.batch == 0 || self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "batch and max_iters must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "momentum must be in [0, 1) and weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// `base_lr · gamma^floor(iter / stepsize)`.
pub fn learning_rate(config: &SgdConfig, iteration: u64) -> f64 {
    config.base_lr * config.gamma.powi((iteration / config.stepsize) as i32)
}

/// Optimizer state; velocity buffers exist only when momentum is on.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    /// One update `θ ← θ − lr(iter)·g` at the params' current iteration,
    /// then advances the iteration counter.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &[Vec<f64>]) -> Result<f64> {
        if grads.len() != params.tensors.len() {
            return Err(Error::shape(
                "sgd step",
                format!(
                    "{} gradients for {} tensors",
                    grads.len(),
                    params.tensors.len()
                ),
            ));
        }
        for (p, g) in params.tensors.iter().zip(grads) {
            if p.data.len() != g.len() {
                return Err(Error::shape(
                    format!("sgd step on {}", p.name),
                    format!(
                        "gradient has {} values, parameter {}",
                        g.len(),
                        p.data.len()
                    ),
                ));
            }
        }
        let lr = learning_rate(&self.config, params.iteration);
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        if mu > 0.0 && self.velocity.is_empty() {
            self.velocity = params
                .tensors
                .iter()
                .map(|p| vec![0.0; p.data.len()])
                .collect();
        }
        for (i, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
            if mu > 0.0 {
                let v = &mut self.velocity[i];
                for ((w, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = mu * *vi + lr * (gi + wd * *w);
                    *w = round_to_f32(*w - *vi);
                }
            } else {
                for (w, &gi) in p.data.iter_mut().zip(g) {
                    *w = round_to_f32(*w - lr * (gi + wd * *w));
                }
            }
        }
        params.iteration += 1;
        Ok(lr)
    }
}
