use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the average- and max-pooled branches of the channel mask are fused
/// before the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFusion {
    Sum,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_channels: usize,
    /// Window length in frames.
    pub window: usize,
    pub d_model: usize,
    pub mask_hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub bio_dim: usize,
    pub film_hidden: usize,
    pub head_hidden: usize,
    pub lambda_smooth: f64,
    pub n_muscles: usize,
    pub mask_fusion: MaskFusion,
    /// Region importance learning; when off the mask is fixed at 1.
    pub use_mask: bool,
    /// Bio conditioning; when off features pass through unmodulated.
    pub use_film: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_channels: 36,
            window: 20,
            d_model: 512,
            mask_hidden: 9,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 2816,
            dropout: 0.1,
            bio_dim: 5,
            film_hidden: 64,
            head_hidden: 128,
            lambda_smooth: 0.1,
            n_muscles: 8,
            mask_fusion: MaskFusion::Sum,
            use_mask: true,
            use_film: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks and quick tests.
    pub fn toy() -> Self {
        Self {
            window: 4,
            d_model: 8,
            n_heads: 2,
            ffn_dim: 16,
            film_hidden: 6,
            head_hidden: 5,
            dropout: 0.0,
            ..Self::default()
        }
    }

    /// Reduced network for desk-scale experiments.
    pub fn reduced() -> Self {
        Self {
            d_model: 128,
            ffn_dim: 256,
            film_hidden: 32,
            head_hidden: 64,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_channels", self.n_channels),
            ("d_model", self.d_model),
            ("mask_hidden", self.mask_hidden),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("bio_dim", self.bio_dim),
            ("film_hidden", self.film_hidden),
            ("head_hidden", self.head_hidden),
            ("n_muscles", self.n_muscles),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.window < 2 {
            return Err(Error::config("window must be at least 2"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.lambda_smooth >= 0.0) {
            return Err(Error::config("lambda_smooth must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}
