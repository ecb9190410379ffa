use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Hyperparameters of heavy-ball SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a positive finite number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per trainable parameter.
#[derive(Debug, Clone)]
pub struct OptimizerState<F: Real> {
    config: SgdConfig,
    velocity: Vec<Vec<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &[Tensor<F>], config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: params.iter().map(|p| vec![F::zero(); p.len()]).collect(),
        })
    }

    pub fn config(&self) -> SgdConfig {
        self.config
    }

    pub fn velocity(&self, slot: usize) -> Option<&[F]> {
        self.velocity.get(slot).map(Vec::as_slice)
    }

    /// `v ← μ·v + g; p ← p − lr·v`, reading `g` from each parameter's grad
    /// field. Gradients are consumed (cleared) by the step.
    pub fn step(&mut self, params: &mut [Tensor<F>]) -> Result<()> {
        if params.len() != self.velocity.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        if let Some(slot) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::Usage(format!("parameter {slot} has no gradient")));
        }
        let lr = F::of(self.config.learning_rate);
        let mu = F::of(self.config.momentum);
        for (slot, (p, v)) in params.iter_mut().zip(&mut self.velocity).enumerate() {
            if v.len() != p.len() {
                return Err(Error::Usage(format!(
                    "momentum buffer {slot} has length {}, parameter has {}",
                    v.len(),
                    p.len()
                )));
            }
            let g = p.grad().map(<[F]>::to_vec).unwrap_or_default();
            for ((x, vel), gv) in p.values_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = mu * *vel + gv;
                *x = *x - lr * *vel;
            }
            p.clear_grad();
            p.check_finite("sgd step")?;
        }
        Ok(())
    }
}

/// Functional form: one momentum step over `params` with their grad fields.
pub fn sgd_step<F: Real>(params: &mut [Tensor<F>], state: &mut OptimizerState<F>) -> Result<()> {
    state.step(params)
}
