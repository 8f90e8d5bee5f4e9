//! The full scene memory and its per-frame update transaction.

use std::sync::Arc;
use std::time::Instant;

use parking_lot::{RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};

use crate::config::MapParams;
use crate::error::{Error, Result};
use crate::frame::ObservationFrame;
use crate::geometry::{CullParams, Pose};
use crate::instance::aggregator::Aggregator;
use crate::instance::discriminator::{LabeledPair, MergingDiscriminator};
use crate::instance::{build_instance2d, group_patches_by_mask, InstanceTable, MergeKind, RemovalOutcome};
use crate::patch_store::PatchStore;
use crate::tokens::{self, Action, PromptPayload, RayParams};
use crate::zone::ZoneGrid;

/// Per-stage wall-clock cost of one update, in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub cull_ms: f64,
    pub add_ms: f64,
    pub merge_ms: f64,
    pub zone_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_id: u64,
    pub added: usize,
    pub culled: usize,
    pub created: usize,
    pub merged: usize,
    pub discarded: usize,
    pub reencoded: usize,
    /// Merges where both sides carry a ground-truth majority, and those among
    /// them joining different objects.
    pub labeled_merges: usize,
    pub impure_merges: usize,
    pub zones_touched: usize,
    pub live_points: usize,
    pub live_instances: usize,
    pub live_zones: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<StageTimings>,
}

#[derive(Clone)]
pub struct SceneMap {
    params: MapParams,
    cull: CullParams,
    pub(crate) store: PatchStore,
    pub(crate) instances: InstanceTable,
    pub(crate) zones: ZoneGrid,
    aggregator: Arc<dyn Aggregator>,
    discriminator: Arc<dyn MergingDiscriminator>,
}

impl std::fmt::Debug for SceneMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SceneMap")
            .field("params", &self.params)
            .field("points", &self.store.len())
            .field("instances", &self.instances.len())
            .field("zones", &self.zones.len())
            .finish()
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl SceneMap {
    pub fn new(params: MapParams, aggregator: Arc<dyn Aggregator>, discriminator: Arc<dyn MergingDiscriminator>) -> Result<Self> {
        params.validate()?;
        if aggregator.dim() != params.feature_dim {
            return Err(Error::InvalidArgument { arg: "aggregator", reason: format!("dimension {} != feature_dim {}", aggregator.dim(), params.feature_dim) });
        }
        Ok(Self {
            cull: params.cull(),
            store: PatchStore::new(params.feature_dim, params.cell_size),
            instances: InstanceTable::new(),
            zones: ZoneGrid::new(params.zone_size)?,
            params,
            aggregator,
            discriminator,
        })
    }

    pub(crate) fn from_parts(
        params: MapParams,
        store: PatchStore,
        instances: InstanceTable,
        zones: ZoneGrid,
        aggregator: Arc<dyn Aggregator>,
        discriminator: Arc<dyn MergingDiscriminator>,
    ) -> Self {
        Self { cull: params.cull(), params, store, instances, zones, aggregator, discriminator }
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn cull_params(&self) -> &CullParams {
        &self.cull
    }

    /// Overrides the culling parameters (used for fault injection).
    pub fn set_cull_params(&mut self, cull: CullParams) -> Result<()> {
        cull.validate()?;
        self.cull = cull;
        Ok(())
    }

    pub fn store(&self) -> &PatchStore {
        &self.store
    }

    pub fn instances(&self) -> &InstanceTable {
        &self.instances
    }

    pub fn zones(&self) -> &ZoneGrid {
        &self.zones
    }

    pub fn aggregator(&self) -> &dyn Aggregator {
        self.aggregator.as_ref()
    }

    pub fn discriminator(&self) -> &dyn MergingDiscriminator {
        self.discriminator.as_ref()
    }

    pub fn set_discriminator(&mut self, d: Arc<dyn MergingDiscriminator>) {
        self.discriminator = d;
    }

    pub fn integrate(&mut self, frame: &ObservationFrame) -> Result<FrameReport> {
        self.integrate_with(frame, None, false)
    }

    /// Cull, add, group, merge-or-create and zone update for one frame. When
    /// `harvest` is given, labeled candidate pairs are appended to it.
    pub fn integrate_with(&mut self, frame: &ObservationFrame, harvest: Option<&mut Vec<LabeledPair>>, timed: bool) -> Result<FrameReport> {
        frame.validate(self.params.feature_dim)?;
        let agg = self.aggregator.clone();
        let t0 = Instant::now();

        let removal = self.store.cull_frame(&frame.depth, &frame.pose, &frame.intrinsics, &self.cull);
        let removed = self.instances.handle_removed_patches(&self.store, &removal, agg.as_ref())?;
        let cull_ms = ms(t0);

        let t1 = Instant::now();
        let added = self.store.add_frame_points(frame, &self.cull)?;
        let add_ms = ms(t1);

        let t2 = Instant::now();
        let groups = group_patches_by_mask(frame, &added)?;
        let inst2d = groups.iter().map(|g| build_instance2d(&self.store, g, agg.as_ref())).collect::<Result<Vec<_>>>()?;
        let merge = self.instances.merge_step(&mut self.store, inst2d, self.discriminator.as_ref(), agg.as_ref(), self.params.top_k, harvest)?;
        let merge_ms = ms(t2);
        let labeled: Vec<bool> = merge.outcomes.iter().filter(|o| o.kind == MergeKind::Merged).filter_map(|o| Some(o.gt2d? == o.gt3d?)).collect();

        let t3 = Instant::now();
        let mut changed = merge.touched();
        let mut gone = Vec::new();
        let (mut discarded, mut reencoded) = (0, 0);
        for r in &removed {
            match r.outcome {
                RemovalOutcome::Discarded => {
                    discarded += 1;
                    gone.push((r.instance, r.zone_before));
                }
                RemovalOutcome::Reencoded => {
                    reencoded += 1;
                    changed.insert(r.instance);
                }
            }
        }
        let touched = self.zones.sync(&mut self.instances, &changed, &gone, agg.as_ref())?;
        let zone_ms = ms(t3);

        Ok(FrameReport {
            frame_id: frame.frame_id,
            added: added.len(),
            culled: removal.len(),
            created: merge.created(),
            merged: merge.merged(),
            discarded,
            reencoded,
            labeled_merges: labeled.len(),
            impure_merges: labeled.iter().filter(|same| !**same).count(),
            zones_touched: touched.len(),
            live_points: self.store.len(),
            live_instances: self.instances.len(),
            live_zones: self.zones.len(),
            timings: timed.then(|| StageTimings { cull_ms, add_ms, merge_ms, zone_ms, total_ms: ms(t0) }),
        })
    }

    /// Full consistency check of index, ownership, instance and zone features
    /// against from-scratch re-aggregation (L∞ tolerance `tol`).
    pub fn check(&self, tol: f64) -> std::result::Result<(), String> {
        self.store.check_index()?;
        self.instances.check(&self.store, Some(self.aggregator.as_ref()), tol)?;
        self.zones.check(&self.instances, Some(self.aggregator.as_ref()), tol)
    }

    /// Token payload for an agent at `agent`.
    pub fn prompt(&self, agent: &Pose, rays: &RayParams, instruction: &str, history: &[Action]) -> Result<PromptPayload> {
        let patches = tokens::render_patch_tokens(&self.store, agent, rays)?;
        let inst = tokens::instance_tokens(&self.instances, agent);
        let zones = tokens::zone_tokens(&self.zones, agent);
        tokens::build_prompt(patches, inst, zones, instruction, history)
    }
}

/// A map shared between one writer and any number of readers. Readers hold a
/// read guard and always observe the state between two whole updates.
#[derive(Clone, Debug)]
pub struct SharedMap(Arc<RwLock<SceneMap>>);

impl SharedMap {
    pub fn new(map: SceneMap) -> Self {
        Self(Arc::new(RwLock::new(map)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, SceneMap> {
        self.0.read()
    }

    pub fn integrate(&self, frame: &ObservationFrame) -> Result<FrameReport> {
        self.0.write().integrate(frame)
    }

    pub fn with_write<T>(&self, f: impl FnOnce(&mut SceneMap) -> T) -> T {
        f(&mut self.0.write())
    }
}
