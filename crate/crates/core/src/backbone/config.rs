//! Model hyperparameters and presets.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Token mixer used by the spatial and temporal blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Wkv,
    /// Quadratic softmax self-attention, for the ablation baseline.
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width.
    pub d: usize,
    /// Number of spatial/temporal(/channel) block groups.
    pub n_triplets: usize,
    pub patch: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub ffn_mult: usize,
    /// Largest diffusion timestep the embedding is expected to see.
    pub t_max: usize,
    pub attention: AttentionKind,
    /// Append a channel-attention block to every group.
    pub channel_blocks: bool,
    /// Residual value guidance in every attention sub-layer.
    pub resvgm: bool,
}

impl ModelConfig {
    /// Full model at hidden width 512: 16 frames of 128x128 RGB, patch 16.
    pub fn small() -> Self {
        Self {
            d: 512,
            n_triplets: 9,
            patch: 16,
            frames: 16,
            channels: 3,
            height: 128,
            width: 128,
            ffn_mult: 4,
            t_max: 1000,
            attention: AttentionKind::Wkv,
            channel_blocks: true,
            resvgm: true,
        }
    }

    /// [`ModelConfig::small`] at hidden width 1024.
    pub fn large() -> Self {
        Self {
            d: 1024,
            ..Self::small()
        }
    }

    /// Desk-scale model for training runs on a CPU.
    pub fn toy() -> Self {
        Self {
            d: 64,
            n_triplets: 2,
            patch: 4,
            frames: 8,
            channels: 1,
            height: 32,
            width: 32,
            ffn_mult: 4,
            t_max: 50,
            attention: AttentionKind::Wkv,
            channel_blocks: true,
            resvgm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 8 || !self.d.is_multiple_of(2) {
            return config_err(format!("width {} must be even and at least 8", self.d));
        }
        if self.n_triplets == 0 {
            return config_err("at least one block group is required");
        }
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return config_err(format!(
                "{}x{} frames are not divisible into {}-pixel patches",
                self.height, self.width, self.patch
            ));
        }
        if self.frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return config_err("video extents must be positive");
        }
        if self.ffn_mult == 0 || self.t_max == 0 {
            return config_err("ffn_mult and t_max must be positive");
        }
        Ok(())
    }

    pub fn grid_h(&self) -> usize {
        self.height / self.patch
    }

    pub fn grid_w(&self) -> usize {
        self.width / self.patch
    }

    /// Tokens per frame.
    pub fn sites(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    /// Tokens per clip.
    pub fn tokens(&self) -> usize {
        self.frames * self.sites()
    }

    /// Values per patch, the width of the embedding input and head output.
    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// `[frames, channels, height, width]` of one clip.
    pub fn video_shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn blocks_per_group(&self) -> usize {
        if self.channel_blocks {
            3
        } else {
            2
        }
    }

    pub fn kinds(&self) -> impl Iterator<Item = (usize, BlockKind)> + '_ {
        let per = self.blocks_per_group();
        (0..self.n_triplets * per).map(move |i| {
            let kind = match i % per {
                0 => BlockKind::Spatial,
                1 => BlockKind::Temporal,
                _ => BlockKind::Channel,
            };
            (i, kind)
        })
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Spatial,
    Temporal,
    Channel,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Spatial => "spatial",
            BlockKind::Temporal => "temporal",
            BlockKind::Channel => "channel",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [ModelConfig::small(), ModelConfig::large(), ModelConfig::toy()] {
            c.validate().unwrap();
        }
        assert_eq!(ModelConfig::small().tokens(), 1024);
        assert_eq!(ModelConfig::toy().tokens(), 512);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut c = ModelConfig::toy();
        c.patch = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.d = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn block_order_is_spatial_temporal_channel() {
        let c = ModelConfig::toy();
        let kinds: Vec<_> = c.kinds().map(|(_, k)| k).collect();
        use BlockKind::*;
        assert_eq!(kinds, [Spatial, Temporal, Channel, Spatial, Temporal, Channel]);
    }
}
