//! Dataset replay with ground-truth quality metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::instance::discriminator::LabeledPair;
use crate::map::{FrameReport, SceneMap};
use crate::sim::dataset::{Dataset, ObjectRecord};

pub const REPORT_FORMAT: &str = "dynscene-replay-report";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    #[serde(flatten)]
    pub counts: FrameReport,
    /// Instances whose centroid is farther than ε from their majority object.
    pub stale: usize,
}

/// Metrics of the map state after the last frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub frame_counter: u64,
    pub live_points: usize,
    pub live_instances: usize,
    pub live_zones: usize,
    pub labeled_instances: usize,
    /// Member-weighted fraction of labeled points agreeing with their
    /// instance's majority id.
    pub purity: f64,
    /// Mean number of instances per ground-truth object present in the map.
    pub fragmentation: f64,
    pub stale_instances: usize,
}

/// Counts accumulated over the replayed frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub first_frame: u64,
    pub frames: usize,
    pub initial_points: usize,
    pub added: usize,
    pub culled: usize,
    pub created: usize,
    pub merged: usize,
    pub discarded: usize,
    pub labeled_merges: usize,
    pub impure_merges: usize,
    /// `1 - impure / labeled`, or `None` without labeled merges.
    pub merge_precision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub format: String,
    pub dataset_seed: u64,
    pub frames: Vec<ReplayFrame>,
    pub totals: RunTotals,
    pub summary: MapSummary,
}

#[derive(Default)]
pub struct ReplayOptions<'a> {
    pub timings: bool,
    /// Continue from this map; replay starts at its frame counter.
    pub resume: Option<SceneMap>,
    /// Stop before this frame index.
    pub until: Option<usize>,
    /// Start at this frame instead of the map's frame counter (re-observing a
    /// dataset the map has already seen).
    pub from_frame: Option<usize>,
    pub harvest: Option<&'a mut Vec<LabeledPair>>,
}

/// Instances whose majority object is gone or farther than `eps` from the centroid.
pub fn stale_count(map: &SceneMap, geometry: &[ObjectRecord], eps: f64) -> usize {
    map.instances()
        .iter()
        .filter(|i| match i.majority_gt() {
            Some(g) => geometry.iter().find(|o| o.gt_id == g).is_none_or(|o| o.shape.distance(&i.centroid) > eps),
            None => false,
        })
        .count()
}

pub fn summarize(map: &SceneMap, geometry: &[ObjectRecord], eps: f64) -> MapSummary {
    let (mut agree, mut labeled_points, mut labeled_instances) = (0usize, 0usize, 0usize);
    let mut per_object: BTreeMap<u32, usize> = BTreeMap::new();
    for inst in map.instances().iter() {
        let n: usize = inst.gt_counts().values().sum();
        if let Some(g) = inst.majority_gt() {
            labeled_instances += 1;
            labeled_points += n;
            agree += inst.majority_count();
            *per_object.entry(g).or_default() += 1;
        }
    }
    MapSummary {
        frame_counter: map.store().frame_counter(),
        live_points: map.store().len(),
        live_instances: map.instances().len(),
        live_zones: map.zones().len(),
        labeled_instances,
        purity: if labeled_points == 0 { 1.0 } else { agree as f64 / labeled_points as f64 },
        fragmentation: if per_object.is_empty() { 0.0 } else { per_object.values().sum::<usize>() as f64 / per_object.len() as f64 },
        stale_instances: stale_count(map, geometry, eps),
    }
}

/// Replays `dataset` in order and returns the final map with its report.
pub fn replay(dataset: &Dataset, cfg: &Config, opts: ReplayOptions<'_>) -> Result<(SceneMap, ReplayReport)> {
    let m = &dataset.manifest;
    let mut map = match opts.resume {
        Some(map) => {
            if map.params().feature_dim != m.feature_dim {
                return Err(Error::Dataset(format!("snapshot dimension {} != dataset dimension {}", map.params().feature_dim, m.feature_dim)));
            }
            map
        }
        None => super::build_map(cfg, m.feature_dim)?,
    };
    let start = opts.from_frame.unwrap_or(map.store().frame_counter() as usize);
    let end = opts.until.unwrap_or(dataset.len()).min(dataset.len());
    if start > end {
        return Err(Error::Dataset(format!("start frame {start} lies beyond the end frame {end}")));
    }
    let eps = cfg.replay.staleness_epsilon;
    let initial_points = map.store().len();
    let mut harvest = opts.harvest;
    let mut frames = Vec::with_capacity(end - start);
    for i in start..end {
        let frame = dataset.frame(i)?;
        let counts = map.integrate_with(&frame, harvest.as_deref_mut(), opts.timings)?;
        let geometry = m.geometry_at(i as u64)?;
        frames.push(ReplayFrame { stale: stale_count(&map, &geometry, eps), counts });
    }
    let sum = |f: fn(&FrameReport) -> usize| frames.iter().map(|r| f(&r.counts)).sum::<usize>();
    let labeled_merges = sum(|c| c.labeled_merges);
    let impure_merges = sum(|c| c.impure_merges);
    let totals = RunTotals {
        first_frame: start as u64,
        frames: frames.len(),
        initial_points,
        added: sum(|c| c.added),
        culled: sum(|c| c.culled),
        created: sum(|c| c.created),
        merged: sum(|c| c.merged),
        discarded: sum(|c| c.discarded),
        labeled_merges,
        impure_merges,
        merge_precision: (labeled_merges > 0).then(|| 1.0 - impure_merges as f64 / labeled_merges as f64),
    };
    let last = end.max(1) as u64 - 1;
    let summary = summarize(&map, &m.geometry_at(last)?, eps);
    let report = ReplayReport { format: REPORT_FORMAT.into(), dataset_seed: m.seed, frames, totals, summary };
    Ok((map, report))
}
