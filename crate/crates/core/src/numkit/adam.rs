use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
    cfg: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        AdamState { step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params], cfg }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f32 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.cfg.lr = lr;
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) -> Result<()> {
        ensure_shape!(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            "adam state for {} parameters, got {} params and {} grads",
            self.m.len(),
            params.len(),
            grads.len()
        );
        if let Some((i, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            let finite = grads.iter().filter(|g| g.is_finite()).count();
            return Err(Error::NonFinite(format!(
                "gradient[{i}] = {g} at adam step {} ({finite}/{} entries finite)",
                self.step + 1,
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter[{i}] after adam step {}", self.step)));
        }
        Ok(())
    }
}
