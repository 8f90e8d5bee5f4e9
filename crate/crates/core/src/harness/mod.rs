//! Operator commands: replay, discriminator training, oracle verification
//! and latency benchmarking.

pub mod bench;
pub mod replay;
pub mod train;
pub mod verify;

use std::sync::Arc;

use crate::config::{AggregatorKind, Config, DiscriminatorKind};
use crate::error::{Error, Result};
use crate::instance::aggregator::{Aggregator, AttentionAggregator, MeanAggregator};
use crate::instance::discriminator::{GroundTruthDiscriminator, HeuristicDiscriminator, MergingDiscriminator, MlpDiscriminator};
use crate::map::SceneMap;

pub fn build_aggregator(cfg: &Config, dim: usize) -> Result<Arc<dyn Aggregator>> {
    Ok(match cfg.aggregator.kind {
        AggregatorKind::Mean => Arc::new(MeanAggregator::new(dim)),
        AggregatorKind::Attention => {
            let a = match &cfg.aggregator.params {
                Some(p) => AttentionAggregator::load(p)?,
                None => AttentionAggregator::seeded(dim, cfg.aggregator.seed),
            };
            if a.dim() != dim {
                return Err(Error::Config(format!("aggregator dimension {} != feature dimension {dim}", a.dim())));
            }
            Arc::new(a)
        }
    })
}

pub fn build_discriminator(cfg: &Config, dim: usize) -> Result<Arc<dyn MergingDiscriminator>> {
    let d = &cfg.discriminator;
    Ok(match d.kind {
        DiscriminatorKind::Oracle => Arc::new(GroundTruthDiscriminator),
        DiscriminatorKind::Heuristic => Arc::new(HeuristicDiscriminator { min_cosine: d.min_cosine, max_distance: d.max_distance, ..Default::default() }),
        DiscriminatorKind::Mlp => {
            let path = d.params.as_ref().ok_or_else(|| Error::Config("discriminator.kind = \"mlp\" needs discriminator.params".into()))?;
            let m = MlpDiscriminator::load(path)?;
            if m.dim() != dim {
                return Err(Error::Config(format!("discriminator trained for dimension {}, data has {dim}", m.dim())));
            }
            Arc::new(m)
        }
    })
}

/// Empty map for feature dimension `dim` with the configured components.
pub fn build_map(cfg: &Config, dim: usize) -> Result<SceneMap> {
    let params = crate::config::MapParams { feature_dim: dim, ..cfg.map.clone() };
    SceneMap::new(params, build_aggregator(cfg, dim)?, build_discriminator(cfg, dim)?)
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }
}
