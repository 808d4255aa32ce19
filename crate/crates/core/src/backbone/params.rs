//! Parameter layout of the denoiser.

use crate::backbone::config::{AttentionKind, BlockKind, ModelConfig};
use crate::channel::channel_specs;
use crate::numerics::params::{Init, ParamSpec, ParamStore};
use crate::numerics::real::Real;
use crate::numerics::rng::RngStream;
use crate::resvgm::resvgm_specs;
use crate::wkv::wkv_specs;

pub fn block_prefix(i: usize, kind: BlockKind) -> String {
    format!("blocks.{i}.{}", kind.name())
}

fn softmax_specs(prefix: &str, d: usize) -> Vec<ParamSpec> {
    ["w_q", "w_k", "w_v", "w_o"]
        .iter()
        .map(|n| ParamSpec::new(format!("{prefix}.{n}"), &[d, d], Init::XavierUniform))
        .collect()
}

/// Specs for one block; every mixer lives under `{prefix}.attn`.
pub fn block_specs(config: &ModelConfig, prefix: &str, kind: BlockKind) -> Vec<ParamSpec> {
    let d = config.d;
    let hidden = config.ffn_mult * d;
    let attn = format!("{prefix}.attn");
    let mut specs = match (kind, config.attention) {
        (BlockKind::Channel, _) => channel_specs(&attn, d),
        (_, AttentionKind::Wkv) => wkv_specs(&attn, d, kind == BlockKind::Spatial),
        (_, AttentionKind::Softmax) => softmax_specs(&attn, d),
    };
    specs.extend([
        ParamSpec::new(format!("{prefix}.ada.w"), &[d, 6 * d], Init::Zeros),
        ParamSpec::new(format!("{prefix}.ada.b"), &[6 * d], Init::Zeros),
        ParamSpec::new(format!("{prefix}.ffn.w1"), &[d, hidden], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.ffn.b1"), &[hidden], Init::Zeros),
        ParamSpec::new(format!("{prefix}.ffn.w2"), &[hidden, d], Init::XavierUniform),
        ParamSpec::new(format!("{prefix}.ffn.b2"), &[d], Init::Zeros),
    ]);
    if config.resvgm {
        specs.extend(resvgm_specs(prefix, d));
    }
    specs
}

/// Every parameter of the model, in a fixed order. Works for zero block
/// groups too, which leaves the embedding, timestep MLP and head.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let d = config.d;
    let pd = config.patch_dim();
    let mut specs = vec![
        ParamSpec::new("patch.w", &[pd, d], Init::XavierUniform),
        ParamSpec::new("patch.b", &[d], Init::Zeros),
        ParamSpec::new("pos.spatial", &[config.sites(), d], Init::Normal(0.02)),
        ParamSpec::new("pos.temporal", &[config.frames, d], Init::Normal(0.02)),
        ParamSpec::new("time.w1", &[d, d], Init::Normal(0.02)),
        ParamSpec::new("time.b1", &[d], Init::Zeros),
        ParamSpec::new("time.w2", &[d, d], Init::Normal(0.02)),
        ParamSpec::new("time.b2", &[d], Init::Zeros),
    ];
    for (i, kind) in config.kinds() {
        specs.extend(block_specs(config, &block_prefix(i, kind), kind));
    }
    specs.extend([
        ParamSpec::new("final.ln.w", &[d], Init::Ones),
        ParamSpec::new("final.ln.b", &[d], Init::Zeros),
        ParamSpec::new("head.w", &[d, pd], Init::Zeros),
        ParamSpec::new("head.b", &[pd], Init::Zeros),
    ]);
    specs
}

/// Fresh parameters drawn from `rng`.
pub fn init_params<T: Real>(config: &ModelConfig, rng: &mut RngStream) -> ParamStore<T> {
    ParamStore::from_specs(&param_specs(config), rng)
}

pub fn count_params(config: &ModelConfig) -> usize {
    param_specs(config).iter().map(ParamSpec::numel).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_matches_hand_count() {
        let mut c = ModelConfig::toy();
        c.n_triplets = 0;
        let (d, pd, s, f) = (64, 16, 64, 8);
        let embed = pd * d + d;
        let pos = s * d + f * d;
        let time = 2 * (d * d + d);
        let head = 2 * d + d * pd + pd;
        assert_eq!(count_params(&c), embed + pos + time + head);
    }

    #[test]
    fn one_group_width_eight_has_48_guidance_weights() {
        let mut c = ModelConfig::toy();
        c.d = 8;
        c.n_triplets = 1;
        let n: usize = param_specs(&c)
            .iter()
            .filter(|s| s.name.contains("lambda"))
            .map(ParamSpec::numel)
            .sum();
        assert_eq!(n, 48);
    }

    #[test]
    fn width_doubling_roughly_quadruples() {
        let s = count_params(&ModelConfig::small()) as f64;
        let l = count_params(&ModelConfig::large()) as f64;
        assert!((3.5..4.5).contains(&(l / s)), "{}", l / s);
    }

    #[test]
    fn names_are_unique() {
        let specs = param_specs(&ModelConfig::toy());
        let mut names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), specs.len());
    }
}
