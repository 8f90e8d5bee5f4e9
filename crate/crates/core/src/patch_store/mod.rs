//! Feature-point multiset with frustum-culled updates and voxel-hash queries.
//!
//! Every observation first culls the stored points that the new depth image
//! proves stale, then adds one point per valid patch. The voxel index only
//! narrows the candidate set; membership is always decided by the exact
//! culling predicate.

mod index;

use std::collections::BTreeMap;

use rustc_hash::FxHashSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use index::{Cell, Entry, VoxelIndex};

use crate::error::{Error, Result};
use crate::feature;
use crate::frame::ObservationFrame;
use crate::geometry::{self, patch_center_pixel, CameraIntrinsics, CullParams, DepthMap, Point3, Pose, PATCH_COUNT, PATCH_GRID};
use crate::instance::InstanceId;

/// Map-lifetime unique point id; never reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointId(pub u64);

/// One projected patch.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePoint {
    pub id: PointId,
    /// Unit-norm patch feature.
    pub feature: Box<[f32]>,
    pub position: Point3,
    pub heading: f64,
    pub size: f64,
    pub frame_id: u64,
    pub patch_index: u16,
    /// Simulator ground-truth id, when known.
    pub gt_instance: Option<u32>,
    pub owner: Option<InstanceId>,
}

/// Points removed by one culling pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RemovalReport {
    /// Removed ids, ascending.
    pub removed: Vec<PointId>,
    /// Removed points grouped by the instance that owned them.
    pub by_owner: BTreeMap<InstanceId, Vec<FeaturePoint>>,
    /// Removed ids that had no owner.
    pub unowned: Vec<PointId>,
}

impl RemovalReport {
    pub fn len(&self) -> usize {
        self.removed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.removed.is_empty()
    }
}

/// Net effect of integrating one frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameDiff {
    pub removal: RemovalReport,
    /// `(patch index, new point id)`, in patch order.
    pub added: Vec<(usize, PointId)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: PointId,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit<'a> {
    pub id: PointId,
    /// Along-ray distance from the origin.
    pub depth: f64,
    pub feature: &'a [f32],
}

#[derive(Clone, Debug)]
pub struct PatchStore {
    dim: usize,
    points: BTreeMap<PointId, FeaturePoint>,
    index: VoxelIndex,
    next_id: u64,
    frame_counter: u64,
}

impl PatchStore {
    pub const DEFAULT_CELL_SIZE: f64 = 0.5;

    pub fn new(dim: usize, cell_size: f64) -> Self {
        Self { dim, points: BTreeMap::new(), index: VoxelIndex::new(cell_size), next_id: 0, frame_counter: 0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_size(&self) -> f64 {
        self.index.cell_size()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame_counter(&self) -> u64 {
        self.frame_counter
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn get(&self, id: PointId) -> Option<&FeaturePoint> {
        self.points.get(&id)
    }

    /// Points in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &FeaturePoint> {
        self.points.values()
    }

    pub fn index(&self) -> &VoxelIndex {
        &self.index
    }

    pub(crate) fn set_owner(&mut self, id: PointId, owner: Option<InstanceId>) {
        if let Some(p) = self.points.get_mut(&id) {
            p.owner = owner;
        }
    }

    /// Inserts a new point with a fresh id. The feature is renormalized.
    #[allow(clippy::too_many_arguments)]
    pub fn insert(
        &mut self,
        feature: &[f32],
        position: Point3,
        heading: f64,
        size: f64,
        frame_id: u64,
        patch_index: u16,
        gt_instance: Option<u32>,
    ) -> Result<PointId> {
        if feature.len() != self.dim {
            return Err(Error::MalformedFrame(format!("feature dimension {} != configured {}", feature.len(), self.dim)));
        }
        let feature = feature::normalize_f32(feature).ok_or(Error::ZeroNorm("patch feature"))?;
        let id = PointId(self.next_id);
        self.next_id += 1;
        self.insert_raw(FeaturePoint { id, feature: feature.into_boxed_slice(), position, heading, size, frame_id, patch_index, gt_instance, owner: None });
        Ok(id)
    }

    /// Inserts a fully specified point (snapshot restore).
    pub(crate) fn insert_raw(&mut self, point: FeaturePoint) {
        self.next_id = self.next_id.max(point.id.0 + 1);
        self.index.insert(&point.position, point.id);
        self.points.insert(point.id, point);
    }

    pub(crate) fn restore_counters(&mut self, next_id: u64, frame_counter: u64) {
        self.next_id = self.next_id.max(next_id);
        self.frame_counter = frame_counter;
    }

    pub fn remove(&mut self, id: PointId) -> Option<FeaturePoint> {
        let p = self.points.remove(&id)?;
        let found = self.index.remove(&p.position, id);
        debug_assert!(found, "index out of sync for {id:?}");
        Some(p)
    }

    /// Removes every point satisfying the culling predicate for this view.
    pub fn cull_frame(&mut self, depth: &DepthMap, pose: &Pose, k: &CameraIntrinsics, params: &CullParams) -> RemovalReport {
        let mut removed = self.cull_candidates(depth, pose, k, params);
        removed.sort_unstable();
        let mut report = RemovalReport::default();
        for &id in &removed {
            let p = self.remove(id).expect("candidate is live");
            match p.owner {
                Some(owner) => report.by_owner.entry(owner).or_default().push(p),
                None => report.unowned.push(id),
            }
        }
        report.removed = removed;
        report
    }

    /// Ids satisfying the culling predicate, found through the index.
    pub fn cull_candidates(&self, depth: &DepthMap, pose: &Pose, k: &CameraIntrinsics, params: &CullParams) -> Vec<PointId> {
        let mut out = Vec::new();
        let Some((blo, bhi)) = self.index.bounds() else { return out };
        let frustum = ViewFrustum::new(depth, pose, k, params);
        let cs = self.index.cell_size();
        let lo = Cell::of(&frustum.lo, cs);
        let hi = Cell::of(&frustum.hi, cs);
        let lo = Cell { x: lo.x.max(blo.x), y: lo.y.max(blo.y), z: lo.z.max(blo.z) };
        let hi = Cell { x: hi.x.min(bhi.x), y: hi.y.min(bhi.y), z: hi.z.min(bhi.z) };
        if lo.x > hi.x || lo.y > hi.y || lo.z > hi.z {
            return out;
        }
        let mut visit = |entries: &[Entry]| {
            for e in entries {
                if geometry::cull_predicate(&e.position, depth, pose, k, params) {
                    out.push(e.id);
                }
            }
        };
        let span = ((hi.x - lo.x + 1) as u128) * ((hi.y - lo.y + 1) as u128) * ((hi.z - lo.z + 1) as u128);
        if span > self.index.occupied_cells() as u128 {
            for (cell, ids) in self.index.iter() {
                let inside = (lo.x..=hi.x).contains(&cell.x) && (lo.y..=hi.y).contains(&cell.y) && (lo.z..=hi.z).contains(&cell.z);
                if inside && frustum.may_intersect(cell, cs) {
                    visit(ids);
                }
            }
        } else {
            // Reject BLOCK^3 groups of cells first, then test single cells.
            const BLOCK: i64 = 4;
            let bs = cs * BLOCK as f64;
            for bx in lo.x.div_euclid(BLOCK)..=hi.x.div_euclid(BLOCK) {
                for by in lo.y.div_euclid(BLOCK)..=hi.y.div_euclid(BLOCK) {
                    for bz in lo.z.div_euclid(BLOCK)..=hi.z.div_euclid(BLOCK) {
                        if !frustum.may_intersect(&Cell { x: bx, y: by, z: bz }, bs) {
                            continue;
                        }
                        for x in (bx * BLOCK).max(lo.x)..=(bx * BLOCK + BLOCK - 1).min(hi.x) {
                            for y in (by * BLOCK).max(lo.y)..=(by * BLOCK + BLOCK - 1).min(hi.y) {
                                for z in (bz * BLOCK).max(lo.z)..=(bz * BLOCK + BLOCK - 1).min(hi.z) {
                                    let cell = Cell { x, y, z };
                                    if !frustum.may_intersect(&cell, cs) {
                                        continue;
                                    }
                                    if let Some(entries) = self.index.get(&cell) {
                                        visit(entries);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Culls, then adds one point per patch with a valid depth below the horizon.
    pub fn integrate_frame(&mut self, frame: &ObservationFrame, params: &CullParams) -> Result<FrameDiff> {
        frame.validate(self.dim)?;
        params.validate()?;
        let removal = self.cull_frame(&frame.depth, &frame.pose, &frame.intrinsics, params);
        let added = self.add_frame_points(frame, params)?;
        Ok(FrameDiff { removal, added })
    }

    /// The insertion half of [`PatchStore::integrate_frame`]; advances the frame counter.
    pub fn add_frame_points(&mut self, frame: &ObservationFrame, params: &CullParams) -> Result<Vec<(usize, PointId)>> {
        frame.validate(self.dim)?;
        let k = &frame.intrinsics;
        let mut added = Vec::with_capacity(PATCH_COUNT);
        for patch in 0..PATCH_COUNT {
            let (row, col) = (patch / PATCH_GRID, patch % PATCH_GRID);
            let (pr, pc) = patch_center_pixel(row, col, k.height, k.width);
            let Some(d) = frame.depth.valid(pr, pc) else { continue };
            if d >= params.horizon {
                continue;
            }
            let g = geometry::patch_geometry(&frame.pose, k, row, col, d)?;
            let mask = frame.masks.get(pr, pc);
            let gt = (frame.ground_truth_masks && mask != 0).then_some(mask);
            let id = self.insert(frame.patch_feature(patch), g.position, g.heading, g.size, frame.frame_id, patch as u16, gt)?;
            added.push((patch, id));
        }
        self.frame_counter += 1;
        Ok(added)
    }

    /// Up to `k` nearest points, ascending by distance then id.
    pub fn knn(&self, query: &Point3, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let Some((blo, bhi)) = self.index.bounds() else { return Vec::new() };
        let cs = self.index.cell_size();
        let q = Cell::of(query, cs);
        let max_ring = [q.x - blo.x, bhi.x - q.x, q.y - blo.y, bhi.y - q.y, q.z - blo.z, bhi.z - q.z].into_iter().max().unwrap_or(0).max(0);
        let side = 2 * max_ring as u128 + 1;
        let mut cand: Vec<Neighbor> = Vec::new();
        let push = |cand: &mut Vec<Neighbor>, entries: &[Entry]| {
            cand.extend(entries.iter().map(|e| Neighbor { id: e.id, distance: (e.position - query).norm() }));
        };
        if side * side * side > 8 * self.index.occupied_cells() as u128 + 27 {
            for (_, ids) in self.index.iter() {
                push(&mut cand, ids);
            }
        } else {
            for r in 0..=max_ring {
                for x in q.x - r..=q.x + r {
                    for y in q.y - r..=q.y + r {
                        for z in q.z - r..=q.z + r {
                            if (x - q.x).abs().max((y - q.y).abs()).max((z - q.z).abs()) != r {
                                continue;
                            }
                            if let Some(ids) = self.index.get(&Cell { x, y, z }) {
                                push(&mut cand, ids);
                            }
                        }
                    }
                }
                if cand.len() >= k {
                    sort_neighbors(&mut cand);
                    cand.truncate(k);
                    // Unvisited points are at least r cells away.
                    if cand[k - 1].distance < r as f64 * cs {
                        return cand;
                    }
                }
            }
        }
        sort_neighbors(&mut cand);
        cand.truncate(k);
        cand
    }

    /// Nearest-along-ray point within `radius` of the ray and `(0, max_range]` along it.
    pub fn ray_query(&self, origin: &Point3, direction: &Vector3<f64>, radius: f64, max_range: f64) -> Result<Option<RayHit<'_>>> {
        if !((direction.norm() - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidArgument { arg: "direction", reason: format!("must be unit length (norm {})", direction.norm()) });
        }
        if !(radius >= 0.0) || !(max_range > 0.0) {
            return Err(Error::InvalidArgument { arg: "radius/max_range", reason: "radius must be >= 0 and max_range > 0".into() });
        }
        let Some((blo, bhi)) = self.index.bounds() else { return Ok(None) };
        let cs = self.index.cell_size();
        let ring = (radius / cs).ceil().max(1.0) as i64;

        // Clip the segment to the occupied region grown by the neighbour ring.
        let lo = Vector3::new((blo.x - ring) as f64, (blo.y - ring) as f64, (blo.z - ring) as f64) * cs;
        let hi = Vector3::new((bhi.x + ring + 1) as f64, (bhi.y + ring + 1) as f64, (bhi.z + ring + 1) as f64) * cs;
        let (mut t0, mut t1) = (0.0f64, max_range);
        for a in 0..3 {
            if direction[a].abs() < 1e-300 {
                if origin[a] < lo[a] || origin[a] > hi[a] {
                    return Ok(None);
                }
            } else {
                let ta = (lo[a] - origin[a]) / direction[a];
                let tb = (hi[a] - origin[a]) / direction[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        if t0 > t1 {
            return Ok(None);
        }

        let mut best: Option<(f64, PointId)> = None;
        let mut seen: FxHashSet<Cell> = FxHashSet::default();
        let mut consider = |cell: Cell, best: &mut Option<(f64, PointId)>| {
            for x in cell.x - ring..=cell.x + ring {
                for y in cell.y - ring..=cell.y + ring {
                    for z in cell.z - ring..=cell.z + ring {
                        let c = Cell { x, y, z };
                        if !seen.insert(c) {
                            continue;
                        }
                        let Some(entries) = self.index.get(&c) else { continue };
                        for &Entry { id, position } in entries {
                            let w = position - origin;
                            let along = w.dot(direction);
                            if !(along > 0.0 && along <= max_range) {
                                continue;
                            }
                            if (w - direction * along).norm() > radius {
                                continue;
                            }
                            let better = match *best {
                                None => true,
                                Some((bt, bid)) => along < bt || (along == bt && id < bid),
                            };
                            if better {
                                *best = Some((along, id));
                            }
                        }
                    }
                }
            }
        };

        // Amanatides-Woo traversal starting at the clipped entry point.
        let start = origin + direction * t0;
        let mut cell = Cell::of(&start, cs);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let c = [cell.x, cell.y, cell.z];
        for a in 0..3 {
            let d = direction[a];
            if d > 0.0 {
                step[a] = 1;
                t_max[a] = t0 + (((c[a] + 1) as f64) * cs - start[a]) / d;
                t_delta[a] = cs / d;
            } else if d < 0.0 {
                step[a] = -1;
                t_max[a] = t0 + ((c[a] as f64) * cs - start[a]) / d;
                t_delta[a] = -cs / d;
            }
        }
        let mut t_enter = t0;
        loop {
            if let Some((bt, _)) = best {
                if t_enter > bt {
                    break;
                }
            }
            consider(cell, &mut best);
            let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            t_enter = t_max[a];
            if !(t_enter <= t1) {
                break;
            }
            t_max[a] += t_delta[a];
            match a {
                0 => cell.x += step[0],
                1 => cell.y += step[1],
                _ => cell.z += step[2],
            }
        }
        Ok(best.map(|(depth, id)| RayHit { id, depth, feature: &self.points[&id].feature }))
    }

    /// Verifies that every point sits in the index cell derived from its position.
    pub fn check_index(&self) -> std::result::Result<(), String> {
        if self.index.len() != self.points.len() {
            return Err(format!("index holds {} ids for {} points", self.index.len(), self.points.len()));
        }
        for (cell, entries) in self.index.iter() {
            for Entry { id, position } in entries {
                let Some(p) = self.points.get(id) else { return Err(format!("index references dead point {id:?}")) };
                if p.position != *position {
                    return Err(format!("{id:?} indexed at a stale position"));
                }
                let expected = self.index.cell_of(&p.position);
                if expected != *cell {
                    return Err(format!("{id:?} indexed in {cell:?}, belongs in {expected:?}"));
                }
            }
        }
        Ok(())
    }
}

fn sort_neighbors(v: &mut [Neighbor]) {
    v.sort_unstable_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
}

/// Conservative world-space bound of the region a view can cull.
struct ViewFrustum {
    lo: Point3,
    hi: Point3,
    /// Half-spaces `n . p + d >= 0` in world coordinates.
    planes: [(Vector3<f64>, f64); 6],
}

impl ViewFrustum {
    fn new(depth: &DepthMap, pose: &Pose, k: &CameraIntrinsics, params: &CullParams) -> Self {
        let (max_depth, holes) = depth.extent();
        let far = if holes || params.invert_depth_test { params.horizon } else { params.horizon.min(max_depth + params.near_tolerance) };
        let (h, w) = (depth.height as f64, depth.width as f64);
        let center = pose.center();
        let mut lo = center;
        let mut hi = center;
        for (u, v) in [(0.0, 0.0), (0.0, w), (h, 0.0), (h, w)] {
            let pc = Vector3::new((v - k.cx) / k.fx * far, (u - k.cy) / k.fy * far, far);
            let pw = pose.to_world(&pc);
            lo = lo.inf(&pw);
            hi = hi.sup(&pw);
        }
        let pad = 1e-6 * (1.0 + far);
        lo.add_scalar_mut(-pad);
        hi.add_scalar_mut(pad);
        let cam_planes = [
            (Vector3::new(0.0, 0.0, 1.0), 0.0),
            (Vector3::new(0.0, 0.0, -1.0), far),
            (Vector3::new(0.0, k.fy, k.cy), 0.0),
            (Vector3::new(0.0, -k.fy, h - k.cy), 0.0),
            (Vector3::new(k.fx, 0.0, k.cx), 0.0),
            (Vector3::new(-k.fx, 0.0, w - k.cx), 0.0),
        ];
        let planes = cam_planes.map(|(n, d)| {
            let nw = pose.rotation.transpose() * n;
            (nw, n.dot(&pose.translation) + d)
        });
        Self { lo, hi, planes }
    }

    /// `false` only when the cell lies entirely outside one of the half-spaces.
    fn may_intersect(&self, cell: &Cell, cs: f64) -> bool {
        let half = cs / 2.0;
        let c = Vector3::new((cell.x as f64 + 0.5) * cs, (cell.y as f64 + 0.5) * cs, (cell.z as f64 + 0.5) * cs);
        self.planes.iter().all(|(n, d)| {
            let reach = (n.x.abs() + n.y.abs() + n.z.abs()) * half;
            n.dot(&c) + d + reach >= -1e-6 * n.norm()
        })
    }
}
