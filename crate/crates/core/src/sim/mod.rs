//! Deterministic synthetic rooms of boxes and spheres with ground-truth ids,
//! rendered by analytic ray casting.

pub mod dataset;
pub mod render;
pub mod trajectory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub use render::{render_frame, FeatureProvider};

/// Object placement and room layout. World +y is down; objects rest on the
/// floor plane `y = room_max[1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    /// Render the room's interior faces as background (mask 0).
    pub walls: bool,
    pub object_count: usize,
    /// Range of box half-extents and sphere radii (m).
    pub min_extent: f64,
    pub max_extent: f64,
    pub sphere_fraction: f64,
    /// Object centers are drawn in the horizontal annulus
    /// `placement_inner <= |xz - placement_center| <= placement_outer`.
    pub placement_center: [f64; 2],
    pub placement_inner: f64,
    pub placement_outer: f64,
    /// Minimum horizontal clearance between object bounds (m).
    pub gap: f64,
    pub max_attempts: usize,
    pub feature_dim: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            room_min: [-4.0, -3.0, -4.0],
            room_max: [4.0, 0.0, 4.0],
            walls: true,
            object_count: 6,
            min_extent: 0.2,
            max_extent: 0.45,
            sphere_fraction: 0.4,
            placement_center: [0.0, 0.0],
            placement_inner: 0.0,
            placement_outer: 1.8,
            gap: 0.2,
            max_attempts: 10_000,
            feature_dim: 768,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidArgument { arg: "scene", reason });
        if (0..3).any(|a| !(self.room_min[a] < self.room_max[a])) {
            return bad("room_min must be below room_max on every axis".into());
        }
        if !(self.min_extent > 0.0 && self.min_extent <= self.max_extent) {
            return bad(format!("extent range [{}, {}] invalid", self.min_extent, self.max_extent));
        }
        if !(0.0..=1.0).contains(&self.sphere_fraction) {
            return bad("sphere_fraction must lie in [0, 1]".into());
        }
        if !(self.placement_inner >= 0.0 && self.placement_inner <= self.placement_outer) {
            return bad("placement annulus invalid".into());
        }
        if !(self.gap >= 0.0) || self.feature_dim == 0 {
            return bad("gap must be >= 0 and feature_dim > 0".into());
        }
        if 2.0 * self.max_extent > self.room_max[1] - self.room_min[1] {
            return bad("objects taller than the room".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { center: [f64; 3], half_extents: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

impl Shape {
    pub fn center(&self) -> Point3 {
        match self {
            Shape::Box { center, .. } | Shape::Sphere { center, .. } => Point3::from(*center),
        }
    }

    fn set_center(&mut self, c: Point3) {
        match self {
            Shape::Box { center, .. } | Shape::Sphere { center, .. } => *center = c.into(),
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Box { half_extents: h, .. } => Point3::from(*h).norm(),
            Shape::Sphere { radius, .. } => *radius,
        }
    }

    /// Horizontal half-size used for placement.
    fn footprint(&self) -> f64 {
        match self {
            Shape::Box { half_extents: h, .. } => (h[0] * h[0] + h[2] * h[2]).sqrt(),
            Shape::Sphere { radius, .. } => *radius,
        }
    }

    /// Smallest `t > 0` with `origin + t * dir` on the surface. `dir` need not
    /// be unit length.
    pub fn intersect(&self, origin: &Point3, dir: &Point3) -> Option<f64> {
        match self {
            Shape::Box { center, half_extents } => {
                let c = Point3::from(*center);
                let h = Point3::from(*half_extents);
                let (t0, t1) = slab(origin, dir, &(c - h), &(c + h))?;
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - Point3::from(*center);
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / a;
                let t1 = (-b + sq) / a;
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Distance from `p` to the closest point of the solid (0 inside).
    pub fn distance(&self, p: &Point3) -> f64 {
        match self {
            Shape::Box { center, half_extents } => {
                let d = (p - Point3::from(*center)).abs() - Point3::from(*half_extents);
                d.map(|x| x.max(0.0)).norm()
            }
            Shape::Sphere { center, radius } => ((p - Point3::from(*center)).norm() - radius).max(0.0),
        }
    }
}

/// Entry and exit parameters of a ray through an axis-aligned box.
pub(crate) fn slab(origin: &Point3, dir: &Point3, lo: &Point3, hi: &Point3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut n, mut f) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if n > f {
            std::mem::swap(&mut n, &mut f);
        }
        t0 = t0.max(n);
        t1 = t1.min(f);
    }
    (t0 <= t1).then_some((t0, t1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub gt_id: u32,
    pub shape: Shape,
    pub feature: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Move { gt_id: u32, center: [f64; 3] },
    Remove { gt_id: u32 },
}

/// Applied immediately before frame `frame` is rendered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub frame: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub spec: SceneSpec,
    pub objects: Vec<SceneObject>,
    /// Feature emitted by wall and floor patches.
    pub wall_feature: Vec<f32>,
}

/// Mixes several words into one RNG seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h ^= p;
        // splitmix64 finalizer
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Seeded unit vector with i.i.d. Gaussian direction.
pub fn seeded_unit_vector(dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = crate::feature::normalize_f64(&v) {
            return u.into_iter().map(|x| x as f32).collect();
        }
    }
}

const WALL_STREAM: u64 = 0;
const OBJECT_STREAM: u64 = 1;
const PLACEMENT_STREAM: u64 = 2;

/// Rejection-samples non-overlapping objects. Fully determined by `seed` and `spec`.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, PLACEMENT_STREAM]));
    let floor = spec.room_max[1];
    let mut objects: Vec<SceneObject> = Vec::with_capacity(spec.object_count);
    let mut attempts = 0usize;
    while objects.len() < spec.object_count {
        attempts += 1;
        if attempts > spec.max_attempts {
            return Err(Error::PlacementFailed(spec.max_attempts));
        }
        let sphere = rng.random_bool(spec.sphere_fraction);
        let mut ext = || rng.random_range(spec.min_extent..=spec.max_extent);
        let (half, radius) = ([ext(), ext(), ext()], ext());
        let r = rng.random_range(spec.placement_inner..=spec.placement_outer);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let x = spec.placement_center[0] + r * phi.cos();
        let z = spec.placement_center[1] + r * phi.sin();
        let shape =
            if sphere { Shape::Sphere { center: [x, floor - radius, z], radius } } else { Shape::Box { center: [x, floor - half[1], z], half_extents: half } };
        let f = shape.footprint();
        let inside = x - f >= spec.room_min[0] && x + f <= spec.room_max[0] && z - f >= spec.room_min[2] && z + f <= spec.room_max[2];
        let clear = objects.iter().all(|o| {
            let c = o.shape.center();
            ((c.x - x).powi(2) + (c.z - z).powi(2)).sqrt() >= o.shape.footprint() + f + spec.gap
        });
        if inside && clear {
            let gt_id = objects.len() as u32 + 1;
            let feature = seeded_unit_vector(spec.feature_dim, derive_seed(&[seed, OBJECT_STREAM, gt_id as u64]));
            objects.push(SceneObject { gt_id, shape, feature });
        }
    }
    let wall_feature = seeded_unit_vector(spec.feature_dim, derive_seed(&[seed, WALL_STREAM]));
    Ok(Scene { seed, spec: spec.clone(), objects, wall_feature })
}

impl Scene {
    pub fn object(&self, gt_id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.gt_id == gt_id)
    }

    pub fn apply_event(&mut self, event: &EventKind) -> Result<()> {
        match event {
            EventKind::Move { gt_id, center } => {
                let o = self.objects.iter_mut().find(|o| o.gt_id == *gt_id).ok_or(Error::UnknownObject(*gt_id))?;
                o.shape.set_center(Point3::from(*center));
            }
            EventKind::Remove { gt_id } => {
                let i = self.objects.iter().position(|o| o.gt_id == *gt_id).ok_or(Error::UnknownObject(*gt_id))?;
                self.objects.remove(i);
            }
        }
        Ok(())
    }

    /// Distance from `p` to the current geometry of `gt_id`, or `None` if the
    /// object no longer exists.
    pub fn distance_to_object(&self, gt_id: u32, p: &Point3) -> Option<f64> {
        self.object(gt_id).map(|o| o.shape.distance(p))
    }

    /// Nearest hit along the ray: `(t, gt_id)` with `gt_id = 0` for walls.
    pub fn cast(&self, origin: &Point3, dir: &Point3) -> Option<(f64, u32)> {
        self.cast_among(origin, dir, self.objects.iter())
    }

    pub(crate) fn cast_among<'a>(&self, origin: &Point3, dir: &Point3, objects: impl Iterator<Item = &'a SceneObject>) -> Option<(f64, u32)> {
        let mut best: Option<(f64, u32)> = None;
        for o in objects {
            if let Some(t) = o.shape.intersect(origin, dir) {
                if best.is_none_or(|(bt, bid)| t < bt || (t == bt && o.gt_id < bid)) {
                    best = Some((t, o.gt_id));
                }
            }
        }
        if best.is_none() && self.spec.walls {
            let (lo, hi) = (Point3::from(self.spec.room_min), Point3::from(self.spec.room_max));
            if let Some((_, t1)) = slab(origin, dir, &lo, &hi) {
                if t1 > 0.0 {
                    best = Some((t1, 0));
                }
            }
        }
        best
    }
}
