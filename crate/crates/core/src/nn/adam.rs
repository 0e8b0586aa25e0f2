use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for Adam. Shapes mirror the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    /// Applies one bias-corrected Adam update to `params` in place.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        params.check_same_arch(grads)?;
        params.check_same_arch(&self.first_moment)?;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let moments = self.first_moment.values_mut().zip(self.second_moment.values_mut());
        for ((p, g), (m, v)) in params.values_mut().zip(grads.values()).zip(moments) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        if !params.is_finite() {
            return Err(Error::Numeric(format!(
                "parameters became non-finite at optimizer step {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::apply`].
pub fn adam_step(
    mut params: ModelParams,
    grads: &ModelParams,
    mut state: OptimizerState,
) -> Result<(ModelParams, OptimizerState)> {
    state.apply(&mut params, grads)?;
    Ok((params, state))
}
