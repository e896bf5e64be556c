use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// How the pooled shape context is fused back into the bottleneck.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// `f + broadcast(e)`
    #[default]
    Add,
    /// `f * sigmoid(broadcast(e))`
    Gate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub num_seg_classes: usize,
    pub num_flow_types: usize,
    pub anti_alias: bool,
    pub shape_embed: bool,
    pub blur_k: usize,
    pub mu: f64,
    pub input_hw: (usize, usize),
    pub fusion: Fusion,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            num_seg_classes: 3,
            num_flow_types: 7,
            anti_alias: true,
            shape_embed: true,
            blur_k: 3,
            mu: 1.0,
            input_hw: (64, 128),
            fusion: Fusion::Add,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            bail!(Config, "depth must be >= 2, got {}", self.depth);
        }
        if self.base_channels == 0 || self.num_seg_classes < 2 || self.num_flow_types < 2 {
            bail!(Config, "channel and class counts must be positive");
        }
        let f = 1usize << self.depth;
        let (r, c) = self.input_hw;
        if r == 0 || c == 0 || r % f != 0 || c % f != 0 {
            bail!(
                Config,
                "input {}x{} is not divisible by 2^depth = {}",
                r,
                c,
                f
            );
        }
        if self.blur_k.is_multiple_of(2) {
            bail!(Config, "blur_k must be odd, got {}", self.blur_k);
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            bail!(Config, "mu must be finite and >= 0, got {}", self.mu);
        }
        Ok(())
    }

    /// Channel width of encoder stage `i`; `i == depth` is the bottleneck.
    pub fn width(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Same as `self` except for the anti-aliasing flag.
    pub fn differs_only_in_anti_alias(&self, other: &Self) -> bool {
        let mut o = other.clone();
        o.anti_alias = self.anti_alias;
        *self == o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch_size == 0 || self.max_epochs == 0 {
            bail!(Config, "lr, batch_size and max_epochs must be positive");
        }
        Ok(())
    }
}
