//! Adam optimizer over ordered lists of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::tensor::Tensor2;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimSettings {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        OptimSettings {
            learning_rate,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon <= 0.0
        {
            return Err(Error::Argument(format!(
                "invalid optimizer settings: lr {} beta1 {} beta2 {} eps {}",
                self.learning_rate, self.beta1, self.beta2, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Adam state: first/second moments shaped exactly like the parameters.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub settings: OptimSettings,
    pub step_count: u64,
    first_moment: Vec<Tensor2>,
    second_moment: Vec<Tensor2>,
}

impl OptimState {
    /// Fresh state (zero moments) for the given parameter list.
    pub fn for_params(params: &[&Tensor2], settings: OptimSettings) -> Result<Self> {
        settings.validate()?;
        let first = params
            .iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        let second = params
            .iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        Ok(OptimState {
            settings,
            step_count: 0,
            first_moment: first,
            second_moment: second,
        })
    }

    /// One bias-corrected Adam update. Coordinates whose gradient is exactly
    /// zero and whose moments are zero are left bit-unchanged, which is what
    /// makes gradient masking an exact freeze.
    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[Tensor2]) -> Result<()> {
        if params.len() != grads.len()
            || params.len() != self.first_moment.len()
        {
            return Err(Error::Dimension(format!(
                "adam step over {} params, {} grads, {} moment tensors",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != grads[i].shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::Dimension(format!(
                    "adam step: tensor {i} shapes disagree (param {:?}, grad {:?}, moment {:?})",
                    p.shape(),
                    grads[i].shape(),
                    self.first_moment[i].shape()
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let s = self.settings;
        let bc1 = 1.0 - s.beta1.powi(t);
        let bc2 = 1.0 - s.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_slice();
            let m = self.first_moment[i].as_mut_slice();
            let v = self.second_moment[i].as_mut_slice();
            let x = p.as_mut_slice();
            for j in 0..x.len() {
                m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
                v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let update = s.learning_rate * m_hat / (v_hat.sqrt() + s.epsilon);
                if update != 0.0 {
                    x[j] -= update;
                }
            }
        }
        Ok(())
    }
}
