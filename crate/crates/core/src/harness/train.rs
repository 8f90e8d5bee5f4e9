//! Merging-discriminator training from pairs harvested during oracle replays.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{replay, ReplayOptions};
use crate::config::{Config, DiscriminatorKind, TrainConfig};
use crate::error::{Error, Result};
use crate::instance::discriminator::{LabeledPair, MlpDiscriminator};
use crate::sim::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub format: String,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub harvested_pairs: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    /// Training loss before each step plus the final loss.
    pub loss_curve: Vec<f64>,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

/// Replays every dataset with the ground-truth discriminator and collects the
/// labeled Top-K candidate pairs.
pub fn harvest_pairs(datasets: &[Dataset], cfg: &Config) -> Result<Vec<LabeledPair>> {
    let mut oracle = cfg.clone();
    oracle.discriminator.kind = DiscriminatorKind::Oracle;
    let mut pairs = Vec::new();
    for d in datasets {
        if !d.manifest.ground_truth_masks {
            return Err(Error::MissingGroundTruth);
        }
        replay(d, &oracle, ReplayOptions { harvest: Some(&mut pairs), ..Default::default() })?;
    }
    Ok(pairs)
}

/// Balances classes by downsampling the majority, shuffles, and splits off
/// the validation fraction. Returns `(train, validation)`.
pub fn split_pairs(mut pairs: Vec<LabeledPair>, cfg: &TrainConfig) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pairs.shuffle(&mut rng);
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| p.label);
    let n = pos.len().min(neg.len());
    if n < 2 {
        return Err(Error::Dataset(format!("need at least two pairs of each class, found {} positive and {} negative", pos.len(), neg.len())));
    }
    pos.truncate(n);
    neg.truncate(n);
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let mut val: Vec<_> = pos.drain(..n_val).chain(neg.drain(..n_val)).collect();
    let mut train: Vec<_> = pos.into_iter().chain(neg).collect();
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    Ok((train, val))
}

/// Full-batch gradient descent on the mean pair cross-entropy.
pub fn fit(train: &[LabeledPair], val: &[LabeledPair], dim: usize, cfg: &TrainConfig) -> Result<(MlpDiscriminator, Vec<f64>)> {
    if let Some(p) = train.iter().chain(val).find(|p| p.o2d.len() != dim || p.o3d.len() != dim) {
        return Err(Error::MaskMismatch(format!("pair features have dimension {}, expected {dim}", p.o2d.len())));
    }
    let mut model = MlpDiscriminator::seeded(dim, cfg.hidden, cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut params = model.mlp.flat_params();
    for _ in 0..cfg.epochs {
        let (loss, grad) = model.loss_and_grad(train)?;
        curve.push(loss);
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= cfg.lr * g;
        }
        model.mlp.set_flat_params(&params);
    }
    // Parameters are stored as f32; evaluate what will be saved.
    model.mlp.quantize_f32();
    curve.push(model.loss_and_grad(train)?.0);
    Ok((model, curve))
}

pub fn train_discriminator(datasets: &[Dataset], cfg: &Config) -> Result<(MlpDiscriminator, TrainReport)> {
    let dim = datasets.first().ok_or(Error::Empty("dataset list"))?.manifest.feature_dim;
    if let Some(d) = datasets.iter().find(|d| d.manifest.feature_dim != dim) {
        return Err(Error::Dataset(format!("mixed feature dimensions {dim} and {}", d.manifest.feature_dim)));
    }
    let pairs = harvest_pairs(datasets, cfg)?;
    let harvested = pairs.len();
    let positive = pairs.iter().filter(|p| p.label).count();
    let (train, val) = split_pairs(pairs, &cfg.train)?;
    let (model, loss_curve) = fit(&train, &val, dim, &cfg.train)?;
    let report = TrainReport {
        format: "dynscene-train-report".into(),
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        seed: cfg.train.seed,
        harvested_pairs: harvested,
        positive_pairs: positive,
        negative_pairs: harvested - positive,
        train_pairs: train.len(),
        validation_pairs: val.len(),
        loss_curve,
        train_accuracy: model.accuracy(&train),
        validation_accuracy: model.accuracy(&val),
    };
    Ok((model, report))
}
