//! Depth, mask and patch-feature rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Scene, SceneObject};
use crate::error::Result;
use crate::frame::{MaskImage, ObservationFrame};
use crate::geometry::{patch_center_pixel, CameraIntrinsics, DepthMap, Point3, Pose, PATCH_COUNT, PATCH_GRID};

/// Emits the hit object's feature plus isotropic Gaussian noise of RMS norm
/// `sigma`, renormalized. Patches without a surface get pure noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureProvider {
    pub sigma: f64,
    pub seed: u64,
}

impl Default for FeatureProvider {
    fn default() -> Self {
        Self { sigma: 0.05, seed: 0 }
    }
}

impl FeatureProvider {
    pub fn patch_feature(&self, base: Option<&[f32]>, dim: usize, frame_id: u64, patch: usize) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, frame_id, patch as u64]));
        let scale = self.sigma / (dim as f64).sqrt();
        let mut v: Vec<f64> = match base {
            Some(b) => b.iter().map(|&x| x as f64 + scale * rng.sample::<f64, _>(StandardNormal)).collect(),
            None => (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
        };
        if crate::feature::norm(&v) == 0.0 {
            v[0] = 1.0;
        }
        crate::feature::normalize_f64(&v).expect("nonzero").into_iter().map(|x| x as f32).collect()
    }
}

/// Camera-frame ray through pixel `(row, col)` with unit z component, so the
/// hit parameter is the camera depth.
#[inline]
pub fn pixel_ray(k: &CameraIntrinsics, row: usize, col: usize) -> Point3 {
    Point3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0)
}

/// Objects whose bounding sphere can touch the view frustum.
fn visible_objects<'a>(scene: &'a Scene, pose: &Pose, k: &CameraIntrinsics) -> Vec<&'a SceneObject> {
    let (h, w) = (k.height as f64, k.width as f64);
    // Side planes through the optical center at the image border, as (a, axis):
    // the plane is `c[axis] - a * z = 0`.
    let planes = [((-0.5 - k.cx) / k.fx, 0, 1.0), ((w - 0.5 - k.cx) / k.fx, 0, -1.0), ((-0.5 - k.cy) / k.fy, 1, 1.0), ((h - 0.5 - k.cy) / k.fy, 1, -1.0)];
    scene
        .objects
        .iter()
        .filter(|o| {
            let c = pose.to_camera(&o.shape.center());
            let r = o.shape.bounding_radius();
            c.z + r > 0.0 && planes.iter().all(|&(a, axis, sign)| sign * (c[axis] - a * c.z) / (1.0 + a * a).sqrt() >= -r)
        })
        .collect()
}

/// Ray-casts one frame. Depth is camera z (0 where nothing is hit); masks hold
/// ground-truth ids with 0 for walls and empty space.
pub fn render_frame(scene: &Scene, pose: &Pose, k: &CameraIntrinsics, provider: &FeatureProvider, frame_id: u64) -> Result<ObservationFrame> {
    pose.validate()?;
    k.validate()?;
    let candidates = visible_objects(scene, pose, k);
    let origin = pose.center();
    let to_world = pose.rotation.transpose();
    let (height, width) = (k.height, k.width);
    let rows: Vec<(Vec<f32>, Vec<u32>)> = (0..height)
        .into_par_iter()
        .map(|row| {
            let mut d = Vec::with_capacity(width);
            let mut m = Vec::with_capacity(width);
            for col in 0..width {
                let dir = to_world * pixel_ray(k, row, col);
                match scene.cast_among(&origin, &dir, candidates.iter().copied()) {
                    Some((t, id)) => {
                        d.push(t as f32);
                        m.push(id);
                    }
                    None => {
                        d.push(0.0);
                        m.push(0);
                    }
                }
            }
            (d, m)
        })
        .collect();
    let mut depth = Vec::with_capacity(height * width);
    let mut masks = Vec::with_capacity(height * width);
    for (d, m) in rows {
        depth.extend(d);
        masks.extend(m);
    }
    let depth = DepthMap::new(height, width, depth)?;
    let masks = MaskImage::new(height, width, masks)?;

    let dim = scene.spec.feature_dim;
    let feats: Vec<Vec<f32>> = (0..PATCH_COUNT)
        .into_par_iter()
        .map(|patch| {
            let (r, c) = patch_center_pixel(patch / PATCH_GRID, patch % PATCH_GRID, height, width);
            let base = match (masks.get(r, c), depth.get(r, c) > 0.0) {
                (_, false) => None,
                (0, true) => Some(&scene.wall_feature[..]),
                (id, true) => scene.object(id).map(|o| &o.feature[..]),
            };
            provider.patch_feature(base, dim, frame_id, patch)
        })
        .collect();
    Ok(ObservationFrame { frame_id, pose: *pose, intrinsics: *k, feature_dim: dim, patch_features: feats.concat(), depth, masks, ground_truth_masks: true })
}
