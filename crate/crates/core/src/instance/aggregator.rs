//! Set encoders mapping member features (plus positional features) to one
//! unit-norm vector.

use std::path::Path;

use crate::error::{Error, Result};
use crate::feature::{self, FixedSum};
use crate::geometry::Point3;
use crate::nn::{Activation, Dense, Mlp};

/// Relative positional feature of one member:
/// `[P - mean(P), s, cos(theta), sin(theta)]`.
pub type PositionalFeature = [f64; 6];

#[derive(Clone, Copy, Debug)]
pub struct AggregateItem<'a> {
    pub feature: &'a [f32],
    pub positional: PositionalFeature,
}

/// Deterministic, permutation-invariant set encoder.
pub trait Aggregator: Send + Sync {
    fn dim(&self) -> usize;

    /// Whether [`AggregateItem::positional`] is read; when `false` callers may
    /// leave it zeroed.
    fn uses_positional(&self) -> bool;

    fn aggregate(&self, items: &[AggregateItem<'_>]) -> Result<Vec<f32>>;

    /// True when [`Aggregator::aggregate`] equals [`FixedSum::normalized`] over
    /// the member features, so callers may maintain the sum incrementally.
    fn is_fixed_mean(&self) -> bool {
        false
    }
}

/// Positional features for a member set given `(position, size, heading)` per member.
pub fn positional_features(members: &[(Point3, f64, f64)]) -> Vec<PositionalFeature> {
    if members.is_empty() {
        return Vec::new();
    }
    let mean = members.iter().fold(Point3::zeros(), |acc, (p, _, _)| acc + p) / members.len() as f64;
    members
        .iter()
        .map(|(p, s, theta)| {
            let d = p - mean;
            [d.x, d.y, d.z, *s, theta.cos(), theta.sin()]
        })
        .collect()
}

/// L2-normalized mean of the member features. Positional features are ignored.
/// Accumulation is exact in fixed point, so the output is bit-identical under
/// any permutation of the members.
#[derive(Clone, Copy, Debug)]
pub struct MeanAggregator {
    dim: usize,
}

impl MeanAggregator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Aggregator for MeanAggregator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn uses_positional(&self) -> bool {
        false
    }

    fn aggregate(&self, items: &[AggregateItem<'_>]) -> Result<Vec<f32>> {
        if items.is_empty() {
            return Err(Error::Empty("aggregator input"));
        }
        let mut sum = FixedSum::new(self.dim);
        for it in items {
            if it.feature.len() != self.dim {
                return Err(Error::InvalidArgument { arg: "feature", reason: format!("dimension {} != {}", it.feature.len(), self.dim) });
            }
            sum.add(it.feature);
        }
        sum.normalized().ok_or(Error::ZeroNorm("aggregated feature"))
    }

    fn is_fixed_mean(&self) -> bool {
        true
    }
}

/// Single-query attention pooling over `g_m + MLP(p_m)` with fixed weights.
#[derive(Clone, Debug)]
pub struct AttentionAggregator {
    dim: usize,
    lift: Mlp,
    query: Vec<f64>,
}

impl AttentionAggregator {
    const HIDDEN: usize = 64;

    /// Seeded lift network (6 -> 64 -> D) and unit query.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let lift = Mlp::seeded(&[6, Self::HIDDEN, dim], Activation::Relu, seed, 0.1);
        let q = Mlp::seeded(&[1, dim], Activation::Identity, seed ^ 0x9e37_79b9_7f4a_7c15, 1.0);
        let query = feature::normalize_f64(&q.layers[0].weights).unwrap_or_else(|| vec![0.0; dim]);
        Self { dim, lift, query }
    }

    /// Network form used by the parameter file: the lift layers followed by a
    /// `1 -> D` layer whose weights hold the query.
    pub fn to_mlp_parts(&self) -> Mlp {
        let mut layers = self.lift.layers.clone();
        layers.push(Dense { inputs: 1, outputs: self.dim, weights: self.query.clone(), bias: vec![0.0; self.dim], activation: Activation::Identity });
        Mlp { layers }
    }

    pub fn from_mlp_parts(mut parts: Mlp) -> Result<Self> {
        let q = parts.layers.pop().ok_or_else(|| Error::Params("attention aggregator needs a query layer".into()))?;
        if q.inputs != 1 || parts.layers.is_empty() {
            return Err(Error::Params("query layer must be 1 -> D after the lift layers".into()));
        }
        let dim = q.outputs;
        if parts.input_dim() != 6 || parts.output_dim() != dim {
            return Err(Error::Params(format!("lift must map 6 -> {dim}")));
        }
        Ok(Self { dim, lift: parts, query: q.weights })
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        self.to_mlp_parts().save(stem, "attention-aggregator")
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (mlp, kind) = Mlp::load(stem)?;
        if kind != "attention-aggregator" {
            return Err(Error::Params(format!("expected an attention-aggregator file, found {kind:?}")));
        }
        Self::from_mlp_parts(mlp)
    }
}

impl Aggregator for AttentionAggregator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn uses_positional(&self) -> bool {
        true
    }

    fn aggregate(&self, items: &[AggregateItem<'_>]) -> Result<Vec<f32>> {
        if items.is_empty() {
            return Err(Error::Empty("aggregator input"));
        }
        let scale = (self.dim as f64).sqrt();
        let keys: Vec<Vec<f64>> = items
            .iter()
            .map(|it| {
                if it.feature.len() != self.dim {
                    return Err(Error::InvalidArgument { arg: "feature", reason: format!("dimension {} != {}", it.feature.len(), self.dim) });
                }
                let p = self.lift.forward(&it.positional);
                Ok(it.feature.iter().zip(p).map(|(&g, p)| g as f64 + p).collect())
            })
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = keys.iter().map(|k| feature::dot(k, &self.query) * scale).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut out = vec![0.0; self.dim];
        for (k, w) in keys.iter().zip(&weights) {
            for (o, x) in out.iter_mut().zip(k) {
                *o += w / total * x;
            }
        }
        let out = feature::normalize_f64(&out).ok_or(Error::ZeroNorm("aggregated feature"))?;
        Ok(out.into_iter().map(|x| x as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items<'a>(fs: &'a [Vec<f32>], pos: &[PositionalFeature]) -> Vec<AggregateItem<'a>> {
        fs.iter().zip(pos).map(|(f, p)| AggregateItem { feature: f, positional: *p }).collect()
    }

    #[test]
    fn mean_reference_cases() {
        let agg = MeanAggregator::new(3);
        let e1 = vec![1.0f32, 0.0, 0.0];
        let e2 = vec![0.0f32, 1.0, 0.0];
        let one = agg.aggregate(&items(&[e1.clone()], &[[0.0; 6]])).unwrap();
        assert_eq!(one, e1);
        let two = agg.aggregate(&items(&[e1.clone(), e2.clone()], &[[0.0; 6]; 2])).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((two[0] - h).abs() < 1e-7 && (two[1] - h).abs() < 1e-7);
        assert!(matches!(agg.aggregate(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn attention_is_permutation_invariant_and_unit() {
        let agg = AttentionAggregator::seeded(16, 5);
        let fs: Vec<Vec<f32>> =
            (0..5).map(|i| feature::normalize_f32(&(0..16).map(|j| ((i * 7 + j * 3) % 11) as f32 - 5.0).collect::<Vec<_>>()).unwrap()).collect();
        let members: Vec<(Point3, f64, f64)> = (0..5).map(|i| (Point3::new(i as f64, 0.5 * i as f64, 1.0), 0.1, 0.3 * i as f64)).collect();
        let pos = positional_features(&members);
        let a = agg.aggregate(&items(&fs, &pos)).unwrap();
        let mut rf = fs.clone();
        rf.reverse();
        let mut rp = pos.clone();
        rp.reverse();
        let b = agg.aggregate(&items(&rf, &rp)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!((feature::norm_f32(&a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn attention_parts_round_trip() {
        let agg = AttentionAggregator::seeded(8, 1);
        let back = AttentionAggregator::from_mlp_parts(agg.to_mlp_parts()).unwrap();
        assert_eq!(back.query, agg.query);
        assert_eq!(back.lift, agg.lift);
    }

    #[test]
    fn positional_deltas_sum_to_zero() {
        let members: Vec<(Point3, f64, f64)> = (0..7).map(|i| (Point3::new(i as f64 * 0.37, -1.3 * i as f64, 2.0 + i as f64), 0.2, 0.1)).collect();
        let pos = positional_features(&members);
        for a in 0..3 {
            let s: f64 = pos.iter().map(|p| p[a]).sum();
            assert!(s.abs() < 1e-9);
        }
    }
}
