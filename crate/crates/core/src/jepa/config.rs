use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_px: usize,
    pub channels: usize,
    pub patch_px: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub width: usize,
    /// Hidden width of each MLP block as a multiple of `width`.
    pub mlp_ratio: usize,
    pub out_dim: usize,
    pub predictor_depth: usize,
    pub predictor_width: usize,
}

impl EncoderConfig {
    /// Desk preset: 4 layers, 4 heads, width 64, 64-d output.
    pub fn tiny(channels: usize, image_px: usize) -> Self {
        Self {
            image_px,
            channels,
            patch_px: 4,
            n_layers: 4,
            n_heads: 4,
            width: 64,
            mlp_ratio: 2,
            out_dim: 64,
            predictor_depth: 2,
            predictor_width: 64,
        }
    }

    /// ViT-S scale: 12 layers, 6 heads, width 384, 16-pixel tokens.
    pub fn vit_s(channels: usize, image_px: usize) -> Self {
        Self {
            image_px,
            channels,
            patch_px: 16,
            n_layers: 12,
            n_heads: 6,
            width: 384,
            mlp_ratio: 4,
            out_dim: 64,
            predictor_depth: 2,
            predictor_width: 384,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_px == 0 || !self.image_px.is_multiple_of(self.patch_px) {
            return Err(Error::invalid(format!(
                "image_px {} is not divisible by patch_px {}",
                self.image_px, self.patch_px
            )));
        }
        if self.n_heads == 0 || !self.width.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "width {} is not divisible by n_heads {}",
                self.width, self.n_heads
            )));
        }
        if self.out_dim == 0 || self.channels == 0 || self.n_layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("encoder extents must be positive"));
        }
        if self.predictor_width == 0 || !self.predictor_width.is_multiple_of(self.n_heads) {
            return Err(Error::invalid("predictor_width must be a positive multiple of n_heads"));
        }
        if self.n_tokens() < 2 {
            return Err(Error::invalid("encoder needs at least two tokens for masking"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_px / self.patch_px
    }

    pub fn n_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn token_dim(&self) -> usize {
        self.channels * self.patch_px * self.patch_px
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum of the gradient-descent update.
    pub momentum: f64,
    pub ema_start: f64,
    pub ema_end: f64,
    pub vicreg_gamma: f64,
    pub lambda_var: f64,
    pub lambda_cov: f64,
    pub visible_frac: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl TrainConfig {
    pub fn tiny() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            ema_start: 0.99,
            ema_end: 0.999,
            vicreg_gamma: 1.0,
            lambda_var: 1.0,
            lambda_cov: 0.04,
            visible_frac: 0.6,
            seed: 0,
        }
    }

    /// Published-scale schedule (100 epochs, batch 64, lr 1.5e-4).
    pub fn vit_s() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1.5e-4,
            ..Self::tiny()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        for (name, m) in [("ema_start", self.ema_start), ("ema_end", self.ema_end)] {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::invalid(format!("{name} = {m} is outside [0, 1]")));
            }
        }
        if !(self.visible_frac > 0.0 && self.visible_frac < 1.0) {
            return Err(Error::invalid("visible_frac must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("learning_rate must be positive and momentum in [0, 1)"));
        }
        Ok(())
    }

    /// Linear schedule from `ema_start` to `ema_end` over `total` steps.
    pub fn ema_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.ema_start;
        }
        let t = step as f64 / (total - 1) as f64;
        self.ema_start + (self.ema_end - self.ema_start) * t
    }
}
