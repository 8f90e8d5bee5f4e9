//! 2D instance grouping, 3D instance table, Top-K merge-or-create and removal
//! propagation.

pub mod aggregator;
pub mod discriminator;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FixedSum;
use crate::frame::ObservationFrame;
use crate::geometry::{patch_center_pixel, Point3, PATCH_GRID};
use crate::patch_store::{PatchStore, PointId, RemovalReport};
use crate::zone::ZoneKey;

use aggregator::{positional_features, AggregateItem, Aggregator};
use discriminator::{LabeledPair, MergingDiscriminator, PairInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId(pub u64);

/// Patches of one frame sharing a mask id.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGroup {
    pub mask_id: u32,
    pub members: Vec<PointId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance2D {
    pub mask_id: u32,
    pub members: Vec<PointId>,
    pub feature: Vec<f32>,
    pub centroid: Point3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance3D {
    pub id: InstanceId,
    pub members: BTreeSet<PointId>,
    pub feature: Vec<f32>,
    pub centroid: Point3,
    pub zone: Option<ZoneKey>,
    /// Histogram of member ground-truth ids.
    gt_counts: BTreeMap<u32, usize>,
    /// Running feature sum, kept when the aggregator is a fixed-point mean.
    sum: Option<FixedSum>,
}

impl Instance3D {
    fn new(id: InstanceId, members: BTreeSet<PointId>, store: &PatchStore, agg: &dyn Aggregator) -> Result<Self> {
        let mut gt_counts = BTreeMap::new();
        let mut sum = agg.is_fixed_mean().then(|| FixedSum::new(agg.dim()));
        for m in &members {
            let p = store.get(*m).ok_or_else(|| Error::InvalidArgument { arg: "members", reason: format!("{m:?} is not live") })?;
            if let Some(g) = p.gt_instance {
                *gt_counts.entry(g).or_insert(0) += 1;
            }
            if let Some(s) = sum.as_mut() {
                s.add(&p.feature);
            }
        }
        let mut inst = Self { id, members, feature: Vec::new(), centroid: Point3::zeros(), zone: None, gt_counts, sum };
        inst.refresh(store, agg)?;
        Ok(inst)
    }

    /// Recomputes feature and centroid after a membership change.
    fn refresh(&mut self, store: &PatchStore, agg: &dyn Aggregator) -> Result<()> {
        self.feature = match &self.sum {
            Some(s) => s.normalized().ok_or(Error::ZeroNorm("instance feature"))?,
            None => encode_instance(store, &self.members, agg)?,
        };
        self.centroid = centroid(store, &self.members);
        Ok(())
    }

    /// Most frequent ground-truth id among members (ties: smallest id).
    pub fn majority_gt(&self) -> Option<u32> {
        majority_of_counts(&self.gt_counts)
    }

    /// Members carrying the majority id.
    pub fn majority_count(&self) -> usize {
        self.majority_gt().map_or(0, |g| self.gt_counts[&g])
    }

    pub fn gt_counts(&self) -> &BTreeMap<u32, usize> {
        &self.gt_counts
    }
}

fn majority_of_counts(counts: &BTreeMap<u32, usize>) -> Option<u32> {
    let mut best: Option<(u32, usize)> = None;
    for (&id, &n) in counts {
        if n > 0 && best.is_none_or(|(_, bn)| n > bn) {
            best = Some((id, n));
        }
    }
    best.map(|(id, _)| id)
}

/// Majority ground-truth id over per-patch labels; unlabeled patches are
/// skipped and ties go to the smallest id.
pub fn majority_label(labels: &[Option<u32>]) -> Result<Option<u32>> {
    if labels.is_empty() {
        return Err(Error::Empty("instance"));
    }
    let mut counts = BTreeMap::new();
    for l in labels.iter().flatten() {
        *counts.entry(*l).or_insert(0usize) += 1;
    }
    Ok(majority_of_counts(&counts))
}

/// Splits freshly added patches by the mask id at each patch center.
pub fn group_patches_by_mask(frame: &ObservationFrame, added: &[(usize, PointId)]) -> Result<Vec<PatchGroup>> {
    let m = &frame.masks;
    if m.height != frame.depth.height || m.width != frame.depth.width {
        return Err(Error::MaskMismatch(format!("mask {}x{} vs depth {}x{}", m.height, m.width, frame.depth.height, frame.depth.width)));
    }
    if m.height < PATCH_GRID || m.width < PATCH_GRID || m.data.len() != m.height * m.width {
        return Err(Error::MaskMismatch(format!("mask {}x{} cannot be sampled onto the patch grid", m.height, m.width)));
    }
    let mut groups: BTreeMap<u32, Vec<PointId>> = BTreeMap::new();
    for &(patch, id) in added {
        if patch >= PATCH_GRID * PATCH_GRID {
            return Err(Error::PatchOutOfRange { row: patch / PATCH_GRID, col: patch % PATCH_GRID, rows: PATCH_GRID, cols: PATCH_GRID });
        }
        let (r, c) = patch_center_pixel(patch / PATCH_GRID, patch % PATCH_GRID, m.height, m.width);
        groups.entry(m.get(r, c)).or_default().push(id);
    }
    Ok(groups.into_iter().map(|(mask_id, members)| PatchGroup { mask_id, members }).collect())
}

/// Encodes a non-empty set of stored points with `agg`.
pub fn encode_instance<'a, I>(store: &PatchStore, members: I, agg: &dyn Aggregator) -> Result<Vec<f32>>
where
    I: IntoIterator<Item = &'a PointId>,
{
    let points: Vec<_> = members
        .into_iter()
        .map(|id| store.get(*id).ok_or_else(|| Error::InvalidArgument { arg: "members", reason: format!("{id:?} is not live") }))
        .collect::<Result<_>>()?;
    if points.is_empty() {
        return Err(Error::Empty("instance members"));
    }
    let positional = if agg.uses_positional() {
        positional_features(&points.iter().map(|p| (p.position, p.size, p.heading)).collect::<Vec<_>>())
    } else {
        vec![[0.0; 6]; points.len()]
    };
    let items: Vec<AggregateItem> = points.iter().zip(positional).map(|(p, pos)| AggregateItem { feature: &p.feature, positional: pos }).collect();
    agg.aggregate(&items)
}

fn centroid<'a>(store: &PatchStore, members: impl IntoIterator<Item = &'a PointId>) -> Point3 {
    let mut sum = Point3::zeros();
    let mut n = 0usize;
    for id in members {
        sum += store.get(*id).expect("member is live").position;
        n += 1;
    }
    sum / n as f64
}

pub fn build_instance2d(store: &PatchStore, group: &PatchGroup, agg: &dyn Aggregator) -> Result<Instance2D> {
    let mut members = group.members.clone();
    members.sort_unstable();
    let feature = encode_instance(store, &members, agg)?;
    let centroid = centroid(store, &members);
    Ok(Instance2D { mask_id: group.mask_id, members, feature, centroid })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    Created,
    Merged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub mask_id: u32,
    pub kind: MergeKind,
    pub instance: InstanceId,
    /// Ground-truth majority of the 2D instance and of the chosen 3D instance
    /// before the merge (simulation only).
    pub gt2d: Option<u32>,
    pub gt3d: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MergeReport {
    pub outcomes: Vec<MergeOutcome>,
}

impl MergeReport {
    pub fn created(&self) -> usize {
        self.outcomes.iter().filter(|o| o.kind == MergeKind::Created).count()
    }

    pub fn merged(&self) -> usize {
        self.outcomes.iter().filter(|o| o.kind == MergeKind::Merged).count()
    }

    pub fn touched(&self) -> BTreeSet<InstanceId> {
        self.outcomes.iter().map(|o| o.instance).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalOutcome {
    Reencoded,
    Discarded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemovedPatchOutcome {
    pub instance: InstanceId,
    pub outcome: RemovalOutcome,
    /// Zone the instance was assigned to before the update.
    pub zone_before: Option<ZoneKey>,
}

#[derive(Clone, Debug, Default)]
pub struct InstanceTable {
    instances: BTreeMap<InstanceId, Instance3D>,
    next_id: u64,
}

impl InstanceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: InstanceId) -> Option<&Instance3D> {
        self.instances.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Instance3D> {
        self.instances.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.instances.keys().copied()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub(crate) fn set_zone(&mut self, id: InstanceId, zone: Option<ZoneKey>) {
        if let Some(i) = self.instances.get_mut(&id) {
            i.zone = zone;
        }
    }

    /// Restores an instance verbatim (snapshot load). Owners are set on the store.
    /// Restores an instance verbatim (snapshot load); the stored feature is
    /// kept, sums and histograms are rebuilt from the members.
    pub(crate) fn restore(&mut self, store: &PatchStore, id: InstanceId, members: BTreeSet<PointId>, feature: Vec<f32>, agg: &dyn Aggregator) -> Result<()> {
        if members.is_empty() {
            return Err(Error::Snapshot(format!("instance {} has no members", id.0)));
        }
        if self.instances.contains_key(&id) {
            return Err(Error::Snapshot(format!("duplicate instance {}", id.0)));
        }
        for m in &members {
            let p = store.get(*m).ok_or_else(|| Error::Snapshot(format!("instance {} references missing point {}", id.0, m.0)))?;
            if p.owner != Some(id) {
                return Err(Error::Snapshot(format!("point {} owner does not match instance {}", m.0, id.0)));
            }
        }
        if feature.len() != agg.dim() {
            return Err(Error::Snapshot(format!("instance {} feature has {} dims", id.0, feature.len())));
        }
        let mut inst = Instance3D::new(id, members, store, agg).map_err(|e| Error::Snapshot(e.to_string()))?;
        inst.feature = feature;
        self.instances.insert(id, inst);
        self.next_id = self.next_id.max(id.0 + 1);
        Ok(())
    }

    pub(crate) fn restore_next_id(&mut self, next: u64) {
        self.next_id = self.next_id.max(next);
    }

    /// Up to `k` live instances nearest to `p` by centroid distance,
    /// restricted to ids below `limit` (ties: smaller id).
    pub fn nearest(&self, p: &Point3, k: usize, limit: InstanceId) -> Vec<(InstanceId, f64)> {
        let mut all: Vec<(InstanceId, f64)> = self.instances.range(..limit).map(|(id, i)| (*id, (i.centroid - p).norm())).collect();
        all.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    /// Top-K merge-or-create for one frame's 2D instances, processed in
    /// mask-id order. Instances created during this step are not candidates.
    /// When `harvest` is given, every candidate pair with known ground truth
    /// is recorded with its label.
    #[allow(clippy::too_many_arguments)]
    pub fn merge_step(
        &mut self,
        store: &mut PatchStore,
        mut instances2d: Vec<Instance2D>,
        disc: &dyn MergingDiscriminator,
        agg: &dyn Aggregator,
        top_k: usize,
        mut harvest: Option<&mut Vec<LabeledPair>>,
    ) -> Result<MergeReport> {
        if top_k == 0 {
            return Err(Error::InvalidArgument { arg: "top_k", reason: "must be >= 1".into() });
        }
        instances2d.sort_by_key(|i| i.mask_id);
        let limit = InstanceId(self.next_id);
        let mut report = MergeReport::default();
        for inst in instances2d {
            let labels: Vec<Option<u32>> = inst.members.iter().map(|id| store.get(*id).and_then(|p| p.gt_instance)).collect();
            let gt2d = majority_label(&labels)?;
            let use_gt = disc.uses_ground_truth();
            let mut best: Option<(f64, InstanceId)> = None;
            for (cid, distance) in self.nearest(&inst.centroid, top_k, limit) {
                let cand = &self.instances[&cid];
                let gt3d = cand.majority_gt();
                let pair = PairInput {
                    o2d: &inst.feature,
                    o3d: &cand.feature,
                    distance,
                    gt2d: if use_gt { gt2d } else { None },
                    gt3d: if use_gt { gt3d } else { None },
                };
                let prob = disc.positive_probability(&pair);
                if let (Some(h), Some(a), Some(b)) = (harvest.as_deref_mut(), gt2d, gt3d) {
                    h.push(LabeledPair { o2d: inst.feature.clone(), o3d: cand.feature.clone(), distance, label: a == b });
                }
                if prob > 0.5 && best.is_none_or(|(bp, bid)| prob > bp || (prob == bp && cid < bid)) {
                    best = Some((prob, cid));
                }
            }
            let outcome = match best {
                Some((_, target)) => {
                    let gt3d = self.instances[&target].majority_gt();
                    for m in &inst.members {
                        store.set_owner(*m, Some(target));
                    }
                    let t = self.instances.get_mut(&target).expect("candidate is live");
                    for (m, l) in inst.members.iter().zip(&labels) {
                        t.members.insert(*m);
                        if let Some(g) = l {
                            *t.gt_counts.entry(*g).or_insert(0) += 1;
                        }
                        if let Some(s) = t.sum.as_mut() {
                            s.add(&store.get(*m).expect("member is live").feature);
                        }
                    }
                    t.refresh(store, agg)?;
                    MergeOutcome { mask_id: inst.mask_id, kind: MergeKind::Merged, instance: target, gt2d, gt3d }
                }
                None => {
                    let id = InstanceId(self.next_id);
                    self.next_id += 1;
                    for m in &inst.members {
                        store.set_owner(*m, Some(id));
                    }
                    let members: BTreeSet<PointId> = inst.members.iter().copied().collect();
                    self.instances.insert(id, Instance3D::new(id, members, store, agg)?);
                    MergeOutcome { mask_id: inst.mask_id, kind: MergeKind::Created, instance: id, gt2d, gt3d: None }
                }
            };
            report.outcomes.push(outcome);
        }
        Ok(report)
    }

    /// Propagates culled points: survivors are re-encoded, emptied instances
    /// are dropped from the table (the caller detaches them from their zone).
    pub fn handle_removed_patches(&mut self, store: &PatchStore, report: &RemovalReport, agg: &dyn Aggregator) -> Result<Vec<RemovedPatchOutcome>> {
        let mut out = Vec::with_capacity(report.by_owner.len());
        for (owner, removed) in &report.by_owner {
            let Some(inst) = self.instances.get_mut(owner) else { continue };
            for p in removed {
                if !inst.members.remove(&p.id) {
                    continue;
                }
                if let Some(g) = p.gt_instance {
                    if let Some(c) = inst.gt_counts.get_mut(&g) {
                        *c -= 1;
                        if *c == 0 {
                            inst.gt_counts.remove(&g);
                        }
                    }
                }
                if let Some(s) = inst.sum.as_mut() {
                    s.sub(&p.feature);
                }
            }
            let zone_before = inst.zone;
            if inst.members.is_empty() {
                self.instances.remove(owner);
                out.push(RemovedPatchOutcome { instance: *owner, outcome: RemovalOutcome::Discarded, zone_before });
            } else {
                inst.refresh(store, agg)?;
                out.push(RemovedPatchOutcome { instance: *owner, outcome: RemovalOutcome::Reencoded, zone_before });
            }
        }
        Ok(out)
    }

    /// Full-scan check of the ownership partition and of each instance's
    /// feature and centroid against a from-scratch rebuild.
    pub fn check(&self, store: &PatchStore, agg: Option<&dyn Aggregator>, tol: f64) -> std::result::Result<(), String> {
        let mut total = 0usize;
        for inst in self.instances.values() {
            if inst.members.is_empty() {
                return Err(format!("instance {:?} is empty", inst.id));
            }
            let mut counts = BTreeMap::new();
            for m in &inst.members {
                let p = store.get(*m).ok_or_else(|| format!("instance {:?} lists dead point {m:?}", inst.id))?;
                if p.owner != Some(inst.id) {
                    return Err(format!("point {m:?} owner {:?} but listed by {:?}", p.owner, inst.id));
                }
                if let Some(g) = p.gt_instance {
                    *counts.entry(g).or_insert(0usize) += 1;
                }
            }
            if counts != inst.gt_counts {
                return Err(format!("instance {:?} ground-truth histogram out of date", inst.id));
            }
            total += inst.members.len();
            let c = centroid(store, &inst.members);
            if (c - inst.centroid).norm() > 1e-9 {
                return Err(format!("instance {:?} centroid off by {:e}", inst.id, (c - inst.centroid).norm()));
            }
            if let Some(agg) = agg {
                let fresh = encode_instance(store, &inst.members, agg).map_err(|e| e.to_string())?;
                let err = fresh.iter().zip(&inst.feature).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
                if err > tol {
                    return Err(format!("instance {:?} feature off by {err:e}", inst.id));
                }
            }
        }
        if total != store.len() {
            return Err(format!("{} live points but {total} owned", store.len()));
        }
        Ok(())
    }
}
