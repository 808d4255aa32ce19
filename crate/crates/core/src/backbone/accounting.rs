//! Analytic FLOP counts per clip.
//!
//! Every dense product contributes two FLOPs per multiply-accumulate. The
//! WKV scan is counted as two multiply-accumulates per channel per token in
//! each direction, and guidance as two per element; normalizations,
//! activations and other elementwise work are not counted.

use crate::backbone::config::{AttentionKind, BlockKind, ModelConfig};

fn linear(rows: u64, k: u64, m: u64) -> u64 {
    2 * rows * k * m
}

fn softmax_attn(tokens: u64, seq_len: u64, d: u64) -> u64 {
    // scores and weighted values
    2 * linear(tokens, d, seq_len)
}

fn shared(cfg: &ModelConfig) -> (u64, u64, u64, u64) {
    (cfg.tokens() as u64, cfg.d as u64, cfg.sites() as u64, cfg.frames as u64)
}

fn ends(cfg: &ModelConfig) -> u64 {
    let (n, d, _, _) = shared(cfg);
    let pd = cfg.patch_dim() as u64;
    let time = 2 * linear(1, d, d);
    linear(n, pd, d) + linear(n, d, pd) + time
}

fn block_common(cfg: &ModelConfig) -> u64 {
    let (n, d, _, _) = shared(cfg);
    let hidden = (cfg.ffn_mult as u64) * d;
    linear(1, d, 6 * d) + linear(n, d, hidden) + linear(n, hidden, d)
}

fn mixer(cfg: &ModelConfig, kind: BlockKind) -> u64 {
    let (n, d, s, f) = shared(cfg);
    let guide = if cfg.resvgm { 4 * n * d } else { 0 };
    guide
        + match (kind, cfg.attention) {
            (BlockKind::Channel, _) => 4 * linear(n, d, d) + 2 * linear(d, n, d),
            (BlockKind::Spatial, AttentionKind::Wkv) => 4 * linear(n, d, d) + 2 * 9 * n * d + 8 * n * d,
            (BlockKind::Temporal, AttentionKind::Wkv) => 4 * linear(n, d, d) + 2 * 3 * n * d + 8 * n * d,
            (BlockKind::Spatial, AttentionKind::Softmax) => 4 * linear(n, d, d) + softmax_attn(n, s, d),
            (BlockKind::Temporal, AttentionKind::Softmax) => 4 * linear(n, d, d) + softmax_attn(n, f, d),
        }
}

/// Forward FLOPs of one clip.
pub fn count_flops(cfg: &ModelConfig) -> u64 {
    ends(cfg) + cfg.kinds().map(|(_, k)| block_common(cfg) + mixer(cfg, k)).sum::<u64>()
}

/// Same depth and widths with softmax self-attention in every block: per
/// frame, per site, and globally over all tokens of the clip in place of
/// the channel block.
pub fn count_flops_quadratic_twin(cfg: &ModelConfig) -> u64 {
    let (n, d, s, f) = shared(cfg);
    let twin = ModelConfig {
        attention: AttentionKind::Softmax,
        resvgm: false,
        ..cfg.clone()
    };
    ends(cfg)
        + cfg
            .kinds()
            .map(|(_, k)| {
                let attn = match k {
                    BlockKind::Spatial => softmax_attn(n, s, d),
                    BlockKind::Temporal => softmax_attn(n, f, d),
                    BlockKind::Channel => softmax_attn(n, n, d),
                };
                block_common(&twin) + 4 * linear(n, d, d) + attn
            })
            .sum::<u64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_mixers_beat_quadratic_twin_at_scale() {
        let cfg = ModelConfig::small();
        assert!(cfg.tokens() >= 1024);
        assert!(count_flops(&cfg) < count_flops_quadratic_twin(&cfg));
    }

    #[test]
    fn flops_grow_linearly_in_frames() {
        let a = ModelConfig::small();
        let b = ModelConfig {
            frames: 32,
            ..a.clone()
        };
        let r = count_flops(&b) as f64 / count_flops(&a) as f64;
        assert!((1.9..2.01).contains(&r), "{r}");
        let r = count_flops_quadratic_twin(&b) as f64 / count_flops_quadratic_twin(&a) as f64;
        assert!(r > 2.02, "{r}");
    }

    #[test]
    fn hand_count_tiny() {
        let cfg = ModelConfig {
            d: 8,
            n_triplets: 1,
            patch: 2,
            frames: 2,
            channels: 1,
            height: 4,
            width: 4,
            ffn_mult: 2,
            t_max: 10,
            channel_blocks: false,
            resvgm: false,
            attention: AttentionKind::Softmax,
        };
        // n = 8 tokens, d = 8, s = 4 sites, f = 2 frames, patch dim 4
        let ends = 2 * 8 * 4 * 8 * 2 + 2 * 2 * 8 * 8;
        let common = 2 * 8 * 48 + 2 * 2 * 8 * 8 * 16;
        let proj = 4 * 2 * 8 * 8 * 8;
        let spatial = proj + 4 * 8 * 4 * 8;
        let temporal = proj + 4 * 8 * 2 * 8;
        assert_eq!(count_flops(&cfg), (ends + 2 * common + spatial + temporal) as u64);
    }
}
