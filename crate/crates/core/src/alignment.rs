//! Contrastive alignment losses with analytic gradients, plus the pooled
//! targets they are trained against.

use crate::error::{Error, Result};
use crate::feature;
use crate::geometry::Point3;
use crate::instance::aggregator::{AggregateItem, Aggregator};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Index-aligned candidates and targets: the i-th target is the positive for
/// the i-th candidate, every other target is an in-batch negative.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub candidates: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub temperature: f64,
    /// One subspace center per target.
    pub anchors: Option<Vec<Vec<f64>>>,
}

impl ContrastiveBatch {
    pub fn new(candidates: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, temperature: f64) -> Self {
        Self { candidates, targets, temperature, anchors: None }
    }

    pub fn with_anchors(mut self, anchors: Vec<Vec<f64>>) -> Self {
        self.anchors = Some(anchors);
        self
    }

    fn validate(&self) -> Result<usize> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument { arg: "temperature", reason: format!("must be positive, got {}", self.temperature) });
        }
        let n = self.candidates.len();
        if n == 0 {
            return Err(Error::Empty("contrastive batch"));
        }
        if self.targets.len() != n {
            return Err(Error::InvalidArgument { arg: "targets", reason: format!("{} targets for {n} candidates", self.targets.len()) });
        }
        let dim = self.candidates[0].len();
        let same_dim = |v: &Vec<Vec<f64>>| v.iter().all(|x| x.len() == dim);
        if !same_dim(&self.candidates) || !same_dim(&self.targets) || self.anchors.as_ref().is_some_and(|a| a.len() != n || !same_dim(a)) {
            return Err(Error::InvalidArgument { arg: "batch", reason: "mismatched vector dimensions".into() });
        }
        Ok(n)
    }
}

/// Loss value and its gradient with respect to each candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Instance-to-text contrastive loss.
pub fn loss_instance_text(batch: &ContrastiveBatch) -> Result<LossOutput> {
    if batch.anchors.is_some() {
        return Err(Error::InvalidArgument { arg: "anchors", reason: "not used by this loss".into() });
    }
    contrastive(batch, None)
}

/// Instance-to-pooled-visual distillation loss; same formula as
/// [`loss_instance_text`] with pooled image targets.
pub fn loss_instance_distill(batch: &ContrastiveBatch) -> Result<LossOutput> {
    if batch.anchors.is_some() {
        return Err(Error::InvalidArgument { arg: "anchors", reason: "use loss_subspace_distill".into() });
    }
    contrastive(batch, None)
}

/// Distillation in the subspace re-centered at each view's mean patch feature:
/// the j-th logit of row i is `cos(O_i - V_j, T_j - V_j) / tau`.
pub fn loss_subspace_distill(batch: &ContrastiveBatch) -> Result<LossOutput> {
    let anchors = batch.anchors.as_ref().ok_or_else(|| Error::InvalidArgument { arg: "anchors", reason: "required".into() })?;
    contrastive(batch, Some(anchors))
}

fn contrastive(batch: &ContrastiveBatch, anchors: Option<&Vec<Vec<f64>>>) -> Result<LossOutput> {
    let n = batch.validate()?;
    let dim = batch.candidates[0].len();
    let tau = batch.temperature;
    let zero = vec![0.0; dim];
    let anchor = |j: usize| anchors.map_or(&zero[..], |a| &a[j][..]);

    // Re-anchored unit targets.
    let mut b_hat = Vec::with_capacity(n);
    for j in 0..n {
        let b: Vec<f64> = batch.targets[j].iter().zip(anchor(j)).map(|(t, v)| t - v).collect();
        let degenerate = if anchors.is_some() { Error::DegenerateAnchor { row: j, col: j } } else { Error::ZeroNorm("target") };
        b_hat.push(feature::normalize_f64(&b).ok_or(degenerate)?);
    }

    let mut value = 0.0;
    let mut grad = vec![vec![0.0; dim]; n];
    let mut a_hat = vec![Vec::new(); n];
    let mut a_norm = vec![0.0; n];
    let mut cos = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let a: Vec<f64> = batch.candidates[i].iter().zip(anchor(j)).map(|(o, v)| o - v).collect();
            let na = feature::norm(&a);
            if !(na > 0.0) {
                return Err(if anchors.is_some() { Error::DegenerateAnchor { row: i, col: j } } else { Error::ZeroNorm("candidate") });
            }
            a_hat[j] = a.iter().map(|x| x / na).collect();
            a_norm[j] = na;
            cos[j] = feature::dot(&a_hat[j], &b_hat[j]);
        }
        let logits: Vec<f64> = cos.iter().map(|c| c / tau).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        value += m + sum.ln() - logits[i];
        for j in 0..n {
            let p = (logits[j] - m).exp() / sum;
            let dl = (p - (i == j) as u8 as f64) / (n as f64 * tau);
            if dl == 0.0 {
                continue;
            }
            // d cos(a, b) / d a = (b_hat - cos * a_hat) / |a|
            let scale = dl / a_norm[j];
            for ((g, bh), ah) in grad[i].iter_mut().zip(&b_hat[j]).zip(&a_hat[j]) {
                *g += scale * (bh - cos[j] * ah);
            }
        }
    }
    Ok(LossOutput { value: value / n as f64, grad })
}

/// L2-normalized mean of the patch features under one mask.
pub fn map_ground_truth(patch_features: &[&[f32]]) -> Result<Vec<f32>> {
    let first = patch_features.first().ok_or(Error::Empty("masked patch features"))?;
    if patch_features.iter().any(|f| f.len() != first.len()) {
        return Err(Error::InvalidArgument { arg: "patch_features", reason: "mismatched dimensions".into() });
    }
    feature::normalized_mean(first.len(), patch_features.iter().copied()).ok_or(Error::ZeroNorm("masked mean"))
}

/// Zone-level candidate for one view: the aggregate of its instances'
/// `(feature, centroid)` pairs, to be contrasted against the whole-view feature.
pub fn zone_distill_target(instances: &[(&[f32], Point3)], agg: &dyn Aggregator) -> Result<Vec<f32>> {
    if instances.is_empty() {
        return Err(Error::Empty("view instances"));
    }
    let mean = instances.iter().fold(Point3::zeros(), |a, (_, c)| a + c) / instances.len() as f64;
    let items: Vec<AggregateItem> = instances
        .iter()
        .map(|(f, c)| {
            let d = c - mean;
            AggregateItem { feature: f, positional: [d.x, d.y, d.z, 0.0, 1.0, 0.0] }
        })
        .collect();
    agg.aggregate(&items)
}
