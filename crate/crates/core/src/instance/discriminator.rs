//! Merging discriminators: score whether a fresh 2D instance and an existing
//! 3D instance are the same object. Every implementation returns a
//! two-way logit vector `[different, same]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::feature;
use crate::nn::{Activation, FlatGrad, Mlp};

/// One 2D/3D candidate pair.
#[derive(Clone, Copy, Debug)]
pub struct PairInput<'a> {
    pub o2d: &'a [f32],
    pub o3d: &'a [f32],
    /// Centroid distance in meters.
    pub distance: f64,
    /// Ground-truth majority ids (set only when a discriminator asks for them).
    pub gt2d: Option<u32>,
    pub gt3d: Option<u32>,
}

pub trait MergingDiscriminator: Send + Sync {
    fn logits(&self, pair: &PairInput<'_>) -> [f64; 2];

    /// Needs `gt2d`/`gt3d` populated.
    fn uses_ground_truth(&self) -> bool {
        false
    }

    /// Probability of the "same instance" class.
    fn positive_probability(&self, pair: &PairInput<'_>) -> f64 {
        softmax2(self.logits(pair))[1]
    }
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let a = (z[0] - m).exp();
    let b = (z[1] - m).exp();
    [a / (a + b), b / (a + b)]
}

/// Cross-entropy of a two-way logit vector against class `label`
/// (index 1 = same instance).
pub fn cross_entropy2(z: [f64; 2], label: bool) -> f64 {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    lse - z[label as usize]
}

/// Cosine and distance thresholds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeuristicDiscriminator {
    pub min_cosine: f64,
    pub max_distance: f64,
    pub sharpness: f64,
}

impl Default for HeuristicDiscriminator {
    fn default() -> Self {
        Self { min_cosine: 0.8, max_distance: 2.0, sharpness: 20.0 }
    }
}

impl MergingDiscriminator for HeuristicDiscriminator {
    fn logits(&self, pair: &PairInput<'_>) -> [f64; 2] {
        if !(pair.distance <= self.max_distance) {
            return [0.0, -self.sharpness];
        }
        [0.0, self.sharpness * (feature::cosine_f32(pair.o2d, pair.o3d) - self.min_cosine)]
    }
}

/// Positive iff both ground-truth majority ids are known and equal.
/// Only meaningful on simulator data.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthDiscriminator;

impl MergingDiscriminator for GroundTruthDiscriminator {
    fn logits(&self, pair: &PairInput<'_>) -> [f64; 2] {
        match (pair.gt2d, pair.gt3d) {
            (Some(a), Some(b)) if a == b => [0.0, 20.0],
            _ => [0.0, -20.0],
        }
    }

    fn uses_ground_truth(&self) -> bool {
        true
    }
}

/// Training/evaluation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub o2d: Vec<f32>,
    pub o3d: Vec<f32>,
    pub distance: f64,
    pub label: bool,
}

impl LabeledPair {
    pub fn input(&self) -> PairInput<'_> {
        PairInput { o2d: &self.o2d, o3d: &self.o3d, distance: self.distance, gt2d: None, gt3d: None }
    }
}

/// Two-layer feed-forward scorer over a symmetric pair encoding
/// `[D * (a ⊙ b), sqrt(D) * |a - b|, distance]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDiscriminator {
    dim: usize,
    pub mlp: Mlp,
}

pub const MLP_DISCRIMINATOR_KIND: &str = "merging-discriminator";

impl MlpDiscriminator {
    pub const DEFAULT_HIDDEN: usize = 16;

    pub fn seeded(dim: usize, hidden: usize, seed: u64) -> Self {
        Self { dim, mlp: Mlp::seeded(&[2 * dim + 1, hidden, 2], Activation::Relu, seed, 0.1) }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        let inputs = mlp.input_dim();
        if inputs < 3 || inputs % 2 == 0 || mlp.output_dim() != 2 {
            return Err(Error::Params(format!("discriminator must map 2D+1 -> 2 (got {inputs} -> {})", mlp.output_dim())));
        }
        Ok(Self { dim: (inputs - 1) / 2, mlp })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn featurize(&self, pair: &PairInput<'_>) -> Vec<f64> {
        let d = self.dim as f64;
        let rd = d.sqrt();
        let mut x = Vec::with_capacity(2 * self.dim + 1);
        x.extend(pair.o2d.iter().zip(pair.o3d).map(|(&a, &b)| d * a as f64 * b as f64));
        x.extend(pair.o2d.iter().zip(pair.o3d).map(|(&a, &b)| rd * (a as f64 - b as f64).abs()));
        x.push(pair.distance);
        x
    }

    /// Mean two-way cross-entropy over `pairs` and its gradient with respect
    /// to the flattened parameters.
    pub fn loss_and_grad(&self, pairs: &[LabeledPair]) -> Result<(f64, FlatGrad)> {
        if pairs.is_empty() {
            return Err(Error::Empty("pair list"));
        }
        let mut grad = vec![0.0; self.mlp.parameter_count()];
        let mut total = 0.0;
        let n = pairs.len() as f64;
        for p in pairs {
            let x = self.featurize(&p.input());
            let z = self.mlp.forward(&x);
            let z = [z[0], z[1]];
            total += cross_entropy2(z, p.label);
            let s = softmax2(z);
            let y = p.label as usize;
            let d_out = [(s[0] - (y == 0) as u8 as f64) / n, (s[1] - (y == 1) as u8 as f64) / n];
            self.mlp.backward_accumulate(&x, &d_out, &mut grad);
        }
        Ok((total / n, grad))
    }

    pub fn accuracy(&self, pairs: &[LabeledPair]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let correct = pairs.iter().filter(|p| (self.positive_probability(&p.input()) > 0.5) == p.label).count();
        correct as f64 / pairs.len() as f64
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        self.mlp.save(stem, MLP_DISCRIMINATOR_KIND)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (mlp, kind) = Mlp::load(stem)?;
        if kind != MLP_DISCRIMINATOR_KIND {
            return Err(Error::Params(format!("expected a {MLP_DISCRIMINATOR_KIND} file, found {kind:?}")));
        }
        Self::from_mlp(mlp)
    }
}

impl MergingDiscriminator for MlpDiscriminator {
    fn logits(&self, pair: &PairInput<'_>) -> [f64; 2] {
        let z = self.mlp.forward(&self.featurize(pair));
        [z[0], z[1]]
    }
}

/// Mean cross-entropy of any discriminator over labeled pairs, normalized by
/// the number of pairs.
pub fn segm_loss(pairs: &[LabeledPair], disc: &dyn MergingDiscriminator) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list"));
    }
    Ok(pairs.iter().map(|p| cross_entropy2(disc.logits(&p.input()), p.label)).sum::<f64>() / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_limits() {
        assert!(cross_entropy2([-20.0, 20.0], true) < 1e-8);
        assert!(cross_entropy2([20.0, -20.0], false) < 1e-8);
        assert!((cross_entropy2([0.0, 0.0], true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((cross_entropy2([0.0, 0.0], false) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn heuristic_rejects_orthogonal() {
        let a = [1.0f32, 0.0, 0.0];
        let b = [0.0f32, 1.0, 0.0];
        let h = HeuristicDiscriminator::default();
        let pair = PairInput { o2d: &a, o3d: &b, distance: 0.1, gt2d: None, gt3d: None };
        assert!(h.positive_probability(&pair) < 0.5);
        let same = PairInput { o2d: &a, o3d: &a, distance: 0.1, gt2d: None, gt3d: None };
        assert!(h.positive_probability(&same) > 0.5);
        let far = PairInput { distance: 50.0, ..same };
        assert!(h.positive_probability(&far) < 0.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 6;
        let disc = MlpDiscriminator::seeded(dim, 5, 9);
        let pairs: Vec<LabeledPair> = (0..12)
            .map(|_| {
                let a: Vec<f32> = feature::normalize_f32(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>()).unwrap();
                let b: Vec<f32> = feature::normalize_f32(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>()).unwrap();
                LabeledPair { o2d: a, o3d: b, distance: rng.random_range(0.0..3.0), label: rng.random_bool(0.5) }
            })
            .collect();
        let (_, grad) = disc.loss_and_grad(&pairs).unwrap();
        let base = disc.mlp.flat_params();
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut d = disc.clone();
                let mut p = base.clone();
                p[i] += delta;
                d.mlp.set_flat_params(&p);
                d.loss_and_grad(&pairs).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative error {worst:e}");
        assert!(disc.loss_and_grad(&[]).is_err());
    }
}
