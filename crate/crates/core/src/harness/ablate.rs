//! Component ablation: the same training budget for four model variants,
//! each added mechanism on top of the previous one.

use std::fmt;

use crate::backbone::config::{AttentionKind, ModelConfig};
use crate::error::Result;
use crate::harness::config::TrainConfig;
use crate::harness::train::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Softmax spatial and temporal attention only.
    Baseline,
    Wkv,
    WkvChannel,
    /// Everything, including residual value guidance.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Wkv, Variant::WkvChannel, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Wkv => "+wkv",
            Variant::WkvChannel => "+wkv+channel",
            Variant::Full => "full",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (attention, channel_blocks, resvgm) = match self {
            Variant::Baseline => (AttentionKind::Softmax, false, false),
            Variant::Wkv => (AttentionKind::Wkv, false, false),
            Variant::WkvChannel => (AttentionKind::Wkv, true, false),
            Variant::Full => (AttentionKind::Wkv, true, true),
        };
        ModelConfig {
            attention,
            channel_blocks,
            resvgm,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Final validation error per variant and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<(Variant, Vec<f64>)>,
}

impl AblationReport {
    pub fn scores(&self, v: Variant) -> Option<&[f64]> {
        self.rows.iter().find(|r| r.0 == v).map(|r| r.1.as_slice())
    }

    pub fn mean(&self, v: Variant) -> Option<f64> {
        self.scores(v).map(|s| s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Seeds on which `a` scores strictly lower error than `b`.
    pub fn wins(&self, a: Variant, b: Variant) -> usize {
        match (self.scores(a), self.scores(b)) {
            (Some(x), Some(y)) => x.iter().zip(y).filter(|(p, q)| p < q).count(),
            _ => 0,
        }
    }

    /// Mean error never increases along the variant order of the report.
    pub fn monotone_in_mean(&self) -> bool {
        let means: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.1.iter().sum::<f64>() / r.1.len() as f64)
            .collect();
        means.windows(2).all(|w| w[0] >= w[1])
    }

    /// Mean ordering holds and the full model beats the baseline on a
    /// majority of seeds.
    pub fn trend_holds(&self) -> bool {
        self.monotone_in_mean() && 2 * self.wins(Variant::Full, Variant::Baseline) > self.seeds.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,val_mse\n");
        for (v, scores) in &self.rows {
            for (seed, x) in self.seeds.iter().zip(scores) {
                s.push_str(&format!("{v},{seed},{x:e}\n"));
            }
        }
        s
    }
}

/// Trains every variant on every seed under `base`'s budget. `progress`
/// sees each finished run.
pub fn ablate(
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    mut progress: impl FnMut(Variant, u64, f64),
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for &v in variants {
        let mut scores = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                model: v.apply(&base.model),
                checkpoint_every: 0,
                val_every: 0,
                ..base.clone()
            };
            let mse = train(&cfg, None)?.final_validation();
            progress(v, seed, mse);
            scores.push(mse);
        }
        rows.push((v, scores));
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::params::param_specs;
    use crate::numerics::params::ParamStore;
    use crate::numerics::rng::RngStream;
    use crate::numerics::tensor::Tensor;

    fn report(rows: [[f64; 3]; 4]) -> AblationReport {
        AblationReport {
            seeds: vec![0, 1, 2],
            rows: Variant::ALL.iter().zip(rows).map(|(&v, r)| (v, r.to_vec())).collect(),
        }
    }

    #[test]
    fn trend_logic() {
        let good = report([[0.5, 0.6, 0.4], [0.45, 0.5, 0.5], [0.4, 0.5, 0.45], [0.3, 0.7, 0.3]]);
        assert!(good.trend_holds());
        let flat_full = report([[0.5, 0.6, 0.4], [0.45, 0.5, 0.5], [0.4, 0.5, 0.45], [0.2, 0.9, 0.45]]);
        assert!(!flat_full.trend_holds());
        let unordered = report([[0.5, 0.5, 0.5], [0.6, 0.6, 0.6], [0.4, 0.4, 0.4], [0.3, 0.3, 0.3]]);
        assert!(!unordered.trend_holds());
    }

    #[test]
    fn csv_lists_every_run() {
        let r = report([[1.0; 3]; 4]);
        assert_eq!(r.to_csv().lines().count(), 13);
    }

    /// With zero guidance weights the full model computes exactly what the
    /// variant without guidance computes from the shared parameters.
    #[test]
    fn zero_guidance_full_equals_channel_variant() {
        let base = ModelConfig {
            d: 8,
            n_triplets: 1,
            frames: 2,
            height: 8,
            width: 8,
            ..ModelConfig::toy()
        };
        let full_cfg = Variant::Full.apply(&base);
        let plain_cfg = Variant::WkvChannel.apply(&base);
        let mut rng = RngStream::new(4);
        let mut full = ParamStore::<f64>::new();
        let mut plain = ParamStore::<f64>::new();
        for s in param_specs(&full_cfg) {
            let t = if s.name.contains("lambda") {
                Tensor::zeros(&s.shape)
            } else {
                Tensor::randn(&s.shape, 0.3, &mut rng)
            };
            if !s.name.contains("lambda") {
                plain.insert(&s.name, t.clone()).unwrap();
            }
            full.insert(&s.name, t).unwrap();
        }
        let x = Tensor::randn(&[2, 1, 8, 8], 1.0, &mut rng);
        let a = crate::backbone::predict(&full, &full_cfg, &x, &[7]).unwrap();
        let b = crate::backbone::predict(&plain, &plain_cfg, &x, &[7]).unwrap();
        assert_eq!(a, b);
    }
}
