//! Pinhole camera math: projection, unprojection, per-patch attributes and the
//! frustum-culling predicate.
//!
//! Camera frame is +z forward, +x right, +y down. A [`Pose`] maps world to
//! camera coordinates, `P_c = R * P_w + T`. Pixel coordinates are `(u, v)` with
//! `u` the row (bounded by the image height) and `v` the column (bounded by the
//! width); integer pixel indices sit at integer coordinates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Side of the square patch grid the 2D feature provider emits.
pub const PATCH_GRID: usize = 24;
/// Number of patches per frame.
pub const PATCH_COUNT: usize = PATCH_GRID * PATCH_GRID;

/// Pinhole intrinsics plus image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, height: usize, width: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, height, width };
        k.validate()?;
        Ok(k)
    }

    /// Square image with the principal point at the image center and the
    /// requested horizontal field of view.
    pub fn from_hfov(hfov_deg: f64, height: usize, width: usize) -> Result<Self> {
        let fx = width as f64 / (2.0 * (hfov_deg.to_radians() / 2.0).tan());
        Self::new(fx, fx, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, height, width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidIntrinsics("image size must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Horizontal field of view in radians.
    pub fn hfov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }
}

/// Rigid world-to-camera transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose, checking that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let p = Self { rotation, translation };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) {
            return Err(Error::InvalidPose(format!("rotation not orthonormal (max |R^T R - I| = {err:e})")));
        }
        let det = self.rotation.determinant();
        if !((det - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidPose(format!("rotation determinant {det} != 1")));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidPose("translation must be finite".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` toward `target`, with world +y as "down".
    pub fn look_at(eye: Point3, target: Point3) -> Result<Self> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::InvalidPose("eye and target coincide".into()))?;
        let down = Vector3::new(0.0, 1.0, 0.0);
        let right = down.cross(&forward).try_normalize(1e-12).ok_or_else(|| Error::InvalidPose("view direction is vertical".into()))?;
        let cam_down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), cam_down.transpose(), forward.transpose()]);
        Ok(Self { rotation, translation: -(rotation * eye) })
    }

    /// Level camera at `eye` with heading `yaw` (radians, 0 = +z, clockwise
    /// seen from above, i.e. toward +x).
    pub fn from_yaw(eye: Point3, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        // Columns of R^T are the camera axes in world coordinates.
        let right = Vector3::new(c, 0.0, -s);
        let down = Vector3::new(0.0, 1.0, 0.0);
        let forward = Vector3::new(s, 0.0, c);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self { rotation, translation: -(rotation * eye) }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p_w: &Point3) -> Point3 {
        self.rotation * p_w + self.translation
    }

    #[inline]
    pub fn to_world(&self, p_c: &Point3) -> Point3 {
        self.rotation.transpose() * (p_c - self.translation)
    }

    /// Composes a world-frame rigid motion `x -> rot * x + trans` into the
    /// pose so that moved points project identically.
    pub fn moved_by(&self, rot: &Matrix3<f64>, trans: &Vector3<f64>) -> Self {
        // P_c = R P_w + T = R rot^T (P_w' - trans) + T
        let rotation = self.rotation * rot.transpose();
        let translation = self.translation - rotation * trans;
        Self { rotation, translation }
    }

    /// Row-major rotation entries, for file formats.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&rotation), Vector3::from(translation))
    }
}

/// Real-valued pixel coordinate with camera-frame depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    /// Row.
    pub u: f64,
    /// Column.
    pub v: f64,
    pub z_c: f64,
}

/// Dense H x W depth image in meters; values `<= 0` or non-finite mark "no return".
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::MalformedFrame(format!("depth buffer has {} samples, expected {}x{}", data.len(), height, width)));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col] as f64
    }

    /// `Some(d)` for a usable sample, `None` for holes.
    #[inline]
    pub fn valid(&self, row: usize, col: usize) -> Option<f64> {
        let d = self.get(row, col);
        (d > 0.0 && d.is_finite()).then_some(d)
    }

    /// Largest valid sample and whether any hole exists.
    pub fn extent(&self) -> (f64, bool) {
        // Lane-wise accumulators so the loop vectorizes.
        let mut max = [0.0f32; 8];
        let mut bad = [0u32; 8];
        let chunks = self.data.chunks_exact(8);
        let tail = chunks.remainder();
        for c in chunks {
            for i in 0..8 {
                let ok = (c[i] > 0.0) & (c[i] < f32::INFINITY);
                max[i] = max[i].max(if ok { c[i] } else { 0.0 });
                bad[i] |= !ok as u32;
            }
        }
        for (i, &d) in tail.iter().enumerate() {
            let ok = (d > 0.0) & (d < f32::INFINITY);
            max[i] = max[i].max(if ok { d } else { 0.0 });
            bad[i] |= !ok as u32;
        }
        (max.iter().fold(0.0f32, |a, &b| a.max(b)) as f64, bad.iter().any(|&b| b != 0))
    }
}

/// Projects a world point into the image. `z_c` may be negative for points
/// behind the camera.
pub fn project(p_w: &Point3, pose: &Pose, k: &CameraIntrinsics) -> Result<PixelCoord> {
    let p_c = pose.to_camera(p_w);
    let z_c = p_c.z;
    if z_c.abs() < 1e-12 {
        return Err(Error::DegenerateProjection { z_c });
    }
    Ok(PixelCoord { u: k.fy * p_c.y / z_c + k.cy, v: k.fx * p_c.x / z_c + k.cx, z_c })
}

/// World point whose projection is `(u, v)` at camera depth `depth`.
pub fn unproject(u: f64, v: f64, depth: f64, k: &CameraIntrinsics, pose: &Pose) -> Result<Point3> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    let p_c = Vector3::new((v - k.cx) / k.fx * depth, (u - k.cy) / k.fy * depth, depth);
    Ok(pose.to_world(&p_c))
}

/// Integer pixel sampled for patch `(row, col)` of the patch grid: the pixel
/// containing the patch center under nearest-neighbour downsampling.
#[inline]
pub fn patch_center_pixel(row: usize, col: usize, height: usize, width: usize) -> (usize, usize) {
    let r = ((row as f64 + 0.5) * height as f64 / PATCH_GRID as f64).floor() as usize;
    let c = ((col as f64 + 0.5) * width as f64 / PATCH_GRID as f64).floor() as usize;
    (r.min(height - 1), c.min(width - 1))
}

/// Geometric attributes of one projected patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchGeometry {
    pub position: Point3,
    /// World-frame azimuth of the camera-to-point ray, `atan2(dx, dz)`.
    pub heading: f64,
    /// Metric width of the patch footprint at its depth.
    pub size: f64,
}

pub fn patch_geometry(pose: &Pose, k: &CameraIntrinsics, patch_row: usize, patch_col: usize, patch_depth: f64) -> Result<PatchGeometry> {
    if patch_row >= PATCH_GRID || patch_col >= PATCH_GRID {
        return Err(Error::PatchOutOfRange { row: patch_row, col: patch_col, rows: PATCH_GRID, cols: PATCH_GRID });
    }
    let (pr, pc) = patch_center_pixel(patch_row, patch_col, k.height, k.width);
    let position = unproject(pr as f64, pc as f64, patch_depth, k, pose)?;
    let ray = position - pose.center();
    let heading = ray.x.atan2(ray.z);
    let size = patch_depth * 2.0 * (k.hfov() / 2.0).tan() / PATCH_GRID as f64;
    Ok(PatchGeometry { position, heading, size })
}

/// Culling thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CullParams {
    /// Noise tolerance added to the observed depth (meters).
    pub near_tolerance: f64,
    /// Farthest culling distance (meters).
    pub horizon: f64,
    /// Fault-injection switch for the verification harness: flips the depth
    /// inequality. Never set in normal operation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub invert_depth_test: bool,
}

impl Default for CullParams {
    fn default() -> Self {
        Self { near_tolerance: 0.05, horizon: 5.0, invert_depth_test: false }
    }
}

impl CullParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.near_tolerance >= 0.0) {
            return Err(Error::InvalidArgument { arg: "near_tolerance", reason: "must be >= 0".into() });
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument { arg: "horizon", reason: "must be > 0".into() });
        }
        Ok(())
    }
}

/// Returns `true` when the point must be culled for this observation:
/// `0 < z_c < min(d_uv + near_tolerance, horizon)` and the rounded pixel lies
/// strictly inside the image. Holes in the depth map count as infinitely far.
#[inline]
pub fn cull_predicate(p_w: &Point3, depth: &DepthMap, pose: &Pose, k: &CameraIntrinsics, params: &CullParams) -> bool {
    let p_c = pose.to_camera(p_w);
    let z_c = p_c.z;
    if !(z_c > 0.0) {
        return false;
    }
    let u = (k.fy * p_c.y / z_c + k.cy).round();
    let v = (k.fx * p_c.x / z_c + k.cx).round();
    if !(u > 0.0 && u < depth.height as f64 && v > 0.0 && v < depth.width as f64) {
        return false;
    }
    let d = depth.valid(u as usize, v as usize).unwrap_or(f64::INFINITY);
    let limit = (d + params.near_tolerance).min(params.horizon);
    if params.invert_depth_test {
        z_c > limit
    } else {
        z_c < limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, height: 10, width: 10 }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = nalgebra::Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
        Pose { rotation: *rot.matrix(), translation: Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)) }
    }

    #[test]
    fn project_identity() {
        let p = project(&Vector3::new(0.0, 0.0, 2.0), &Pose::identity(), &unit_k()).unwrap();
        assert_eq!((p.u, p.v, p.z_c), (0.0, 0.0, 2.0));
        let b = project(&Vector3::new(0.0, 0.0, -1.0), &Pose::identity(), &unit_k()).unwrap();
        assert_eq!(b.z_c, -1.0);
        assert!(matches!(project(&Vector3::new(1.0, 0.0, 0.0), &Pose::identity(), &unit_k()), Err(Error::DegenerateProjection { .. })));
    }

    #[test]
    fn unproject_identity_and_errors() {
        let p = unproject(0.0, 0.0, 2.0, &unit_k(), &Pose::identity()).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
        assert!(matches!(unproject(0.0, 0.0, 0.0, &unit_k(), &Pose::identity()), Err(Error::InvalidDepth(_))));
        assert!(unproject(0.0, 0.0, -1.0, &unit_k(), &Pose::identity()).is_err());
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = CameraIntrinsics::from_hfov(90.0, 224, 224).unwrap();
        let mut worst = 0.0f64;
        let mut checked = 0;
        while checked < 10_000 {
            let pose = random_pose(&mut rng);
            let p_w = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let Ok(px) = project(&p_w, &pose, &k) else { continue };
            if px.z_c <= 1e-3 {
                continue;
            }
            let back = unproject(px.u, px.v, px.z_c, &k, &pose).unwrap();
            worst = worst.max((back - p_w).norm());
            checked += 1;
        }
        assert!(worst < 1e-9, "worst round-trip error {worst:e}");
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = CameraIntrinsics::from_hfov(70.0, 120, 160).unwrap();
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let motion = random_pose(&mut rng);
            let p_w = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let moved = motion.rotation * p_w + motion.translation;
            let moved_pose = pose.moved_by(&motion.rotation, &motion.translation);
            let (Ok(a), Ok(b)) = (project(&p_w, &pose, &k), project(&moved, &moved_pose, &k)) else { continue };
            if a.z_c.abs() < 1e-2 {
                continue;
            }
            let scale = 1.0 + a.u.abs().max(a.v.abs());
            assert!(close(a.u, b.u, 1e-9 * scale) && close(a.v, b.v, 1e-9 * scale) && close(a.z_c, b.z_c, 1e-9));
        }
    }

    #[test]
    fn patch_geometry_forward_and_footprint() {
        let mut k = CameraIntrinsics::from_hfov(90.0, 224, 224).unwrap();
        // Put the principal point on the sampled pixel of patch (12, 12).
        let (pr, pc) = patch_center_pixel(12, 12, k.height, k.width);
        k.cx = pc as f64;
        k.cy = pr as f64;
        let g = patch_geometry(&Pose::identity(), &k, 12, 12, 2.0).unwrap();
        assert!(close(g.heading, 0.0, 1e-12));
        assert!(close(g.position.z, 2.0, 1e-12));
        assert!(close(g.size, 4.0 / 24.0, 1e-12), "size {}", g.size);
        assert!(matches!(patch_geometry(&Pose::identity(), &k, 3, 3, 0.0), Err(Error::InvalidDepth(_))));
        assert!(matches!(patch_geometry(&Pose::identity(), &k, 24, 0, 1.0), Err(Error::PatchOutOfRange { .. })));
    }

    #[test]
    fn cull_predicate_arithmetic() {
        let k = CameraIntrinsics { fx: 10.0, fy: 10.0, cx: 5.0, cy: 5.0, height: 10, width: 10 };
        let depth = DepthMap::filled(10, 10, 2.0);
        let params = CullParams { near_tolerance: 0.05, horizon: 5.0, invert_depth_test: false };
        let pose = Pose::identity();
        assert!(!cull_predicate(&Vector3::new(0.0, 0.0, -1.0), &depth, &pose, &k, &params));
        assert!(cull_predicate(&Vector3::new(0.0, 0.0, 1.0), &depth, &pose, &k, &params));
        assert!(!cull_predicate(&Vector3::new(0.0, 0.0, 2.1), &depth, &pose, &k, &params));
        // Holes fall back to the horizon.
        let holes = DepthMap::filled(10, 10, 0.0);
        assert!(cull_predicate(&Vector3::new(0.0, 0.0, 4.9), &holes, &pose, &k, &params));
        assert!(!cull_predicate(&Vector3::new(0.0, 0.0, 5.1), &holes, &pose, &k, &params));
        // u rounds to 0: excluded by the strict inequality.
        assert!(!cull_predicate(&Vector3::new(0.0, -0.49, 1.0), &depth, &pose, &k, &params));
    }

    #[test]
    fn pose_validation() {
        assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
        let p = Pose::look_at(Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 5.0)).unwrap();
        p.validate().unwrap();
        assert!((p.center() - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let y = Pose::from_yaw(Vector3::new(1.0, 0.0, 0.0), 0.0);
        assert!((y.rotation - p.rotation).abs().max() < 1e-12);
    }
}
