//! On-disk synthetic datasets: `manifest.json` plus three little-endian
//! binary arrays per frame. The byte layout is documented in `docs/FORMATS.md`.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::{render_frame, FeatureProvider};
use super::trajectory::Trajectory;
use super::{derive_seed, generate_scene, EventKind, Scene, SceneEvent, SceneSpec, Shape};
use crate::error::{Error, Result};
use crate::frame::{MaskImage, ObservationFrame};
use crate::geometry::{CameraIntrinsics, DepthMap, Point3, Pose, PATCH_COUNT};

pub const DATASET_FORMAT: &str = "dynscene-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSpec {
    pub hfov_deg: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self { hfov_deg: 90.0, height: 224, width: 224 }
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    pub seed: u64,
    pub scene: SceneSpec,
    pub image: ImageSpec,
    pub noise_sigma: f64,
    pub trajectory: Trajectory,
    pub events: Vec<SceneEvent>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self { seed: 0, scene: SceneSpec::default(), image: ImageSpec::default(), noise_sigma: 0.05, trajectory: Trajectory::default(), events: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub gt_id: u32,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: u64,
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub features: String,
    pub depth: String,
    pub masks: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub noise_seed: u64,
    pub noise_sigma: f64,
    pub feature_dim: usize,
    pub intrinsics: CameraIntrinsics,
    pub ground_truth_masks: bool,
    pub scene: SceneSpec,
    /// Object geometry before any event.
    pub objects: Vec<ObjectRecord>,
    pub events: Vec<SceneEvent>,
    pub frames: Vec<FrameRecord>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Dataset(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Dataset(format!("unknown format {:?}", self.format)));
        }
        if self.version != DATASET_VERSION {
            return Err(Error::Dataset(format!("unsupported dataset version {}", self.version)));
        }
        if self.feature_dim == 0 || self.feature_dim > 1 << 16 {
            return Err(Error::Dataset(format!("feature_dim {} out of range", self.feature_dim)));
        }
        self.intrinsics.validate().map_err(|e| Error::Dataset(e.to_string()))?;
        if self.intrinsics.height.checked_mul(self.intrinsics.width).is_none_or(|n| n > 1 << 26) {
            return Err(Error::Dataset("image too large".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.frame_id != i as u64 {
                return Err(Error::Dataset(format!("frame {i} has id {}", f.frame_id)));
            }
            for p in [&f.features, &f.depth, &f.masks] {
                check_relative(p)?;
            }
            Pose::from_row_major(f.rotation, f.translation).map_err(|e| Error::Dataset(format!("frame {i}: {e}")))?;
        }
        for w in self.events.windows(2) {
            if w[0].frame > w[1].frame {
                return Err(Error::Dataset("events must be sorted by frame".into()));
            }
        }
        Ok(())
    }

    /// Object geometry in effect when frame `frame` is rendered.
    pub fn geometry_at(&self, frame: u64) -> Result<Vec<ObjectRecord>> {
        let mut objs = self.objects.clone();
        for e in self.events.iter().take_while(|e| e.frame <= frame) {
            match &e.kind {
                EventKind::Move { gt_id, center } => {
                    let o = objs.iter_mut().find(|o| o.gt_id == *gt_id).ok_or(Error::UnknownObject(*gt_id))?;
                    o.shape = match o.shape {
                        Shape::Box { half_extents, .. } => Shape::Box { center: *center, half_extents },
                        Shape::Sphere { radius, .. } => Shape::Sphere { center: *center, radius },
                    };
                }
                EventKind::Remove { gt_id } => {
                    let i = objs.iter().position(|o| o.gt_id == *gt_id).ok_or(Error::UnknownObject(*gt_id))?;
                    objs.remove(i);
                }
            }
        }
        Ok(objs)
    }
}

fn check_relative(p: &str) -> Result<()> {
    let path = Path::new(p);
    if p.is_empty() || !path.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(Error::Dataset(format!("frame file {p:?} must be a plain relative path")));
    }
    Ok(())
}

pub fn decode_f32_le(bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if expected.checked_mul(4) != Some(bytes.len()) {
        return Err(Error::Dataset(format!("array has {} bytes, expected {expected} f32 values", bytes.len())));
    }
    let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Dataset("non-finite value in f32 array".into()));
    }
    Ok(v)
}

pub fn decode_u32_le(bytes: &[u8], expected: usize) -> Result<Vec<u32>> {
    if expected.checked_mul(4) != Some(bytes.len()) {
        return Err(Error::Dataset(format!("array has {} bytes, expected {expected} u32 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

fn encode_le<T: Copy, const N: usize>(v: &[T], f: impl Fn(T) -> [u8; N]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * N);
    for &x in v {
        out.extend_from_slice(&f(x));
    }
    out
}

/// Decodes one frame's three arrays against the manifest.
pub fn decode_frame(manifest: &Manifest, index: usize, features: &[u8], depth: &[u8], masks: &[u8]) -> Result<ObservationFrame> {
    let rec = manifest.frames.get(index).ok_or_else(|| Error::Dataset(format!("no frame {index}")))?;
    let k = manifest.intrinsics;
    let n = k.height * k.width;
    let patch_features = decode_f32_le(features, PATCH_COUNT * manifest.feature_dim)?;
    let depth = decode_f32_le(depth, n)?;
    if depth.iter().any(|d| *d < 0.0) {
        return Err(Error::Dataset(format!("frame {index}: negative depth")));
    }
    let masks = decode_u32_le(masks, n)?;
    let frame = ObservationFrame {
        frame_id: rec.frame_id,
        pose: Pose::from_row_major(rec.rotation, rec.translation)?,
        intrinsics: k,
        feature_dim: manifest.feature_dim,
        patch_features,
        depth: DepthMap::new(k.height, k.width, depth)?,
        masks: MaskImage::new(k.height, k.width, masks)?,
        ground_truth_masks: manifest.ground_truth_masks,
    };
    frame.validate(manifest.feature_dim).map_err(|e| Error::Dataset(format!("frame {index}: {e}")))?;
    Ok(frame)
}

/// Renders frames in order, applying events as their trigger frame comes up.
pub struct Simulation {
    pub spec: SimSpec,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<Pose>,
    provider: FeatureProvider,
    next: usize,
}

impl Simulation {
    pub fn new(spec: &SimSpec) -> Result<Self> {
        let scene = generate_scene(spec.seed, &spec.scene)?;
        let intrinsics = CameraIntrinsics::from_hfov(spec.image.hfov_deg, spec.image.height, spec.image.width)?;
        let poses = spec.trajectory.poses()?;
        let provider = FeatureProvider { sigma: spec.noise_sigma, seed: noise_seed(spec.seed) };
        let mut events = spec.events.clone();
        events.sort_by_key(|e| e.frame);
        Ok(Self { spec: SimSpec { events, ..spec.clone() }, scene, intrinsics, poses, provider, next: 0 })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Renders the next frame, or `None` at the end of the trajectory.
    pub fn next_frame(&mut self) -> Result<Option<ObservationFrame>> {
        let i = self.next;
        let Some(pose) = self.poses.get(i) else { return Ok(None) };
        for e in self.spec.events.iter().filter(|e| e.frame == i as u64) {
            self.scene.apply_event(&e.kind)?;
        }
        self.next += 1;
        render_frame(&self.scene, pose, &self.intrinsics, &self.provider, i as u64).map(Some)
    }

    fn manifest(&self, initial: &Scene) -> Manifest {
        Manifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            seed: self.spec.seed,
            noise_seed: self.provider.seed,
            noise_sigma: self.provider.sigma,
            feature_dim: self.spec.scene.feature_dim,
            intrinsics: self.intrinsics,
            ground_truth_masks: true,
            scene: self.spec.scene.clone(),
            objects: initial.objects.iter().map(|o| ObjectRecord { gt_id: o.gt_id, shape: o.shape }).collect(),
            events: self.spec.events.clone(),
            frames: (0..self.poses.len())
                .map(|i| {
                    let (f, d, m) = frame_files(i);
                    FrameRecord {
                        frame_id: i as u64,
                        rotation: self.poses[i].rotation_row_major(),
                        translation: self.poses[i].translation.into(),
                        features: f,
                        depth: d,
                        masks: m,
                    }
                })
                .collect(),
        }
    }
}

fn noise_seed(seed: u64) -> u64 {
    derive_seed(&[seed, 0x6e6f_6973_65])
}

fn frame_files(i: usize) -> (String, String, String) {
    (format!("frames/{i:06}.features.bin"), format!("frames/{i:06}.depth.bin"), format!("frames/{i:06}.masks.bin"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders `spec` into `dir`, which is created if needed.
pub fn write_dataset(spec: &SimSpec, dir: &Path) -> Result<Manifest> {
    let mut sim = Simulation::new(spec)?;
    let manifest = sim.manifest(&sim.scene.clone());
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    let mut i = 0;
    while let Some(frame) = sim.next_frame()? {
        let rec = &manifest.frames[i];
        write(&dir.join(&rec.features), &encode_le(&frame.patch_features, f32::to_le_bytes))?;
        write(&dir.join(&rec.depth), &encode_le(&frame.depth.data, f32::to_le_bytes))?;
        write(&dir.join(&rec.masks), &encode_le(&frame.masks.data, u32::to_le_bytes))?;
        i += 1;
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    write(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

/// A dataset opened for sequential or random frame access, either backed by
/// a directory or rendered into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    frames: Option<Vec<ObservationFrame>>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { root: root.to_path_buf(), manifest: Manifest::parse(&text)?, frames: None })
    }

    /// Renders `spec` without touching the filesystem. Frames are identical
    /// to those [`write_dataset`] stores.
    pub fn in_memory(spec: &SimSpec) -> Result<Self> {
        let mut sim = Simulation::new(spec)?;
        let manifest = sim.manifest(&sim.scene.clone());
        let mut frames = Vec::with_capacity(sim.len());
        while let Some(f) = sim.next_frame()? {
            frames.push(f);
        }
        Ok(Self { root: PathBuf::new(), manifest, frames: Some(frames) })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> Result<ObservationFrame> {
        if let Some(frames) = &self.frames {
            return frames.get(index).cloned().ok_or_else(|| Error::Dataset(format!("no frame {index}")));
        }
        let rec = self.manifest.frames.get(index).ok_or_else(|| Error::Dataset(format!("no frame {index}")))?;
        let read = |p: &str| {
            let path = self.root.join(p);
            fs::read(&path).map_err(|e| Error::io(&path, e))
        };
        decode_frame(&self.manifest, index, &read(&rec.features)?, &read(&rec.depth)?, &read(&rec.masks)?)
    }

    /// Distance from `p` to object `gt_id` as it stands at `frame`; `None` once removed.
    pub fn object_distance(&self, frame: u64, gt_id: u32, p: &Point3) -> Result<Option<f64>> {
        Ok(self.manifest.geometry_at(frame)?.iter().find(|o| o.gt_id == gt_id).map(|o| o.shape.distance(p)))
    }
}
