//! Architecture hyperparameters for the toy MoE classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything needed to build a model deterministically. The residual
/// stream width equals `input_dim`; experts are two-layer ReLU perceptrons
/// with an inner width of `expert_hidden_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    /// Experts per layer (M).
    pub num_experts: usize,
    /// Experts executed per token (k).
    pub top_k: usize,
    pub expert_hidden_dim: usize,
    pub num_classes: usize,
    /// Weight of the load-balance auxiliary loss.
    pub lambda_lb: f64,
    /// Weight of the entanglement regularizer; 0 = standard training.
    pub lambda_ent: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 16,
            num_layers: 2,
            num_experts: 8,
            top_k: 2,
            expert_hidden_dim: 32,
            num_classes: 4,
            lambda_lb: 0.01,
            lambda_ent: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 || self.top_k > self.num_experts {
            return Err(Error::Argument(format!(
                "top_k must satisfy 1 <= k <= {} (got {})",
                self.num_experts, self.top_k
            )));
        }
        if self.num_layers < 1 {
            return Err(Error::Argument("num_layers must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Argument("num_classes must be >= 2".into()));
        }
        if self.input_dim < 1 || self.expert_hidden_dim < 1 {
            return Err(Error::Argument(
                "input_dim and expert_hidden_dim must be >= 1".into(),
            ));
        }
        if self.lambda_lb < 0.0 || self.lambda_ent < 0.0 {
            return Err(Error::Argument(
                "loss weights lambda_lb and lambda_ent must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Parameter count of one expert (w1, b1, w2, b2).
    pub fn params_per_expert(&self) -> usize {
        let d = self.input_dim;
        let h = self.expert_hidden_dim;
        h * d + h + d * h + d
    }

    /// Parameter count of one router row.
    pub fn params_per_router_row(&self) -> usize {
        self.input_dim
    }

    /// Total learnable parameters, ignoring adapters.
    pub fn total_params(&self) -> usize {
        let d = self.input_dim;
        d * d
            + self.num_layers * (self.num_experts * d + self.num_experts * self.params_per_expert())
            + self.num_classes * d
    }
}
