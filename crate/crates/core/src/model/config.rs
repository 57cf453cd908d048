use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_embedding: usize,
    pub d_model: usize,
    pub n_ctx_layers: usize,
    pub n_den_layers: usize,
    pub n_heads: usize,
    /// Longest context, in sentences.
    pub max_positions: usize,
    pub t_train: usize,
    pub cfg_drop_prob: f64,
    /// Standard deviation of the normal weight initialisation.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_embedding: 64,
            d_model: 128,
            n_ctx_layers: 4,
            n_den_layers: 4,
            n_heads: 4,
            max_positions: 128,
            t_train: 100,
            cfg_drop_prob: 0.15,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_embedding", self.d_embedding),
            ("d_model", self.d_model),
            ("n_ctx_layers", self.n_ctx_layers),
            ("n_den_layers", self.n_den_layers),
            ("n_heads", self.n_heads),
            ("max_positions", self.max_positions),
            ("t_train", self.t_train),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("model.{key} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("model.d_model must be even".into()));
        }
        if !(0.0..1.0).contains(&self.cfg_drop_prob) {
            return Err(Error::Config(format!(
                "model.cfg_drop_prob must lie in [0, 1), got {}",
                self.cfg_drop_prob
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("model.init_std must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (d, h, p) = (self.d_embedding, self.d_model, self.max_positions);
        let ctx_block = 12 * h * h + 13 * h;
        let den_block = 18 * h * h + 15 * h;
        let context = d * h + h + p * h + self.n_ctx_layers * ctx_block;
        let denoiser = d * h + h // input projection
            + (p + 1) * h // target positions
            + h // null token
            + 2 * (h * h + h) // timestep MLP
            + self.n_den_layers * den_block
            + 2 * h * h + 2 * h // final modulation
            + h * d + d; // output projection
        context + denoiser
    }
}
