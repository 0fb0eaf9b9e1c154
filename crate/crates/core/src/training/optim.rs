use super::{Result, TrainError};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(TrainError::Config(format!(
                "invalid AdamW settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// First and second moments for each parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    /// Completed updates.
    pub step: u64,
    moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        let moments = params
            .iter()
            .map(|(name, t)| (name.to_string(), vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .collect();
        Ok(Self {
            config,
            step: 0,
            moments,
        })
    }

    /// One update with `grads` aligned to `params` order. Decay is applied
    /// to the weights directly, outside the adaptive term.
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grads.len() != self.moments.len() || params.len() != self.moments.len() {
            return Err(TrainError::Contract(format!(
                "{} gradients and {} parameters for {} moment slots",
                grads.len(),
                params.len(),
                self.moments.len()
            )));
        }
        for ((name, t), (g, (mname, _, _))) in params.iter().zip(grads.iter().zip(&self.moments)) {
            if name != mname || g.len() != t.numel() {
                return Err(TrainError::Contract(format!(
                    "gradient for {name} does not match optimizer slot {mname}"
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::Numeric(format!(
                    "non-finite gradient for {name}"
                )));
            }
        }
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((_, t), (g, (_, m, v))) in params.iter_mut().zip(grads.iter().zip(&mut self.moments)) {
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut x = *p as f64;
                x -= lr * c.weight_decay * x;
                x -= lr * mhat / (vhat.sqrt() + c.eps);
                *p = x as f32;
            }
        }
        Ok(())
    }
}
