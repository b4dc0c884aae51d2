use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture hyperparameters. `base_width = 32` at `image_size = 128`
/// gives the reference layer widths (encoder 32/64/128, classifier 64/128,
/// critic 64..2048).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub base_width: usize,
    pub res_blocks: usize,
    /// Strided critic layers; `None` means `log2(image_size) - 1`.
    pub critic_layers: Option<usize>,
    pub critic_max_channels: usize,
    pub leaky_slope: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            base_width: 32,
            res_blocks: 6,
            critic_layers: None,
            critic_max_channels: 2048,
            leaky_slope: 0.01,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.image_size < 8 || self.image_size % 4 != 0 {
            errs.push(format!("model.image_size must be a multiple of 4 and >= 8 (got {})", self.image_size));
        }
        if self.base_width == 0 {
            errs.push("model.base_width must be >= 1".into());
        }
        let layers = self.critic_depth();
        if layers == 0 || self.image_size >> layers == 0 {
            errs.push(format!(
                "model.critic_layers = {layers} leaves no spatial extent at {}px",
                self.image_size
            ));
        }
        if self.critic_max_channels < 2 * self.base_width.max(1) {
            errs.push("model.critic_max_channels must be >= 2 * base_width".into());
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            errs.push("model.leaky_slope must be in [0, 1)".into());
        }
        if !(self.norm_eps > 0.0) {
            errs.push("model.norm_eps must be > 0".into());
        }
        match errs.len() {
            0 => Ok(()),
            1 => Err(Error::Config(errs.remove(0))),
            _ => Err(Error::ConfigList(errs)),
        }
    }

    pub fn critic_depth(&self) -> usize {
        self.critic_layers.unwrap_or_else(|| {
            let log2 = usize::BITS - 1 - self.image_size.max(1).leading_zeros();
            (log2 as usize).saturating_sub(1)
        })
    }

    /// Channels of every latent code (and of classifier block 2).
    pub fn code_channels(&self) -> usize {
        4 * self.base_width
    }

    /// `[channels, height, width]` of one latent code.
    pub fn code_shape(&self) -> [usize; 3] {
        [self.code_channels(), self.image_size / 4, self.image_size / 4]
    }

    pub fn critic_map_size(&self) -> usize {
        self.image_size >> self.critic_depth()
    }
}
