//! Per-frame integration latency at a fixed live-point count.

use serde::{Deserialize, Serialize};

use super::percentile;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::map::StageTimings;
use crate::sim::dataset::Simulation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl Latency {
    fn of(v: &[f64]) -> Self {
        Self { p50_ms: percentile(v, 50.0), p95_ms: percentile(v, 95.0), max_ms: v.iter().cloned().fold(0.0, f64::max) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    pub threads: usize,
    pub feature_dim: usize,
    pub warmup_frames: usize,
    pub measured_frames: usize,
    pub live_points_start: usize,
    pub live_points_end: usize,
    pub min_live_points: usize,
    pub total: Latency,
    pub cull: Latency,
    pub add: Latency,
    pub merge: Latency,
    pub zone: Latency,
    pub budget_ms: f64,
    pub within_budget: bool,
}

pub fn bench(cfg: &Config) -> Result<BenchReport> {
    let b = &cfg.bench;
    let mut sim = Simulation::new(&b.sim)?;
    let dim = b.sim.scene.feature_dim;
    let mut map = super::build_map(cfg, dim)?;
    let mut warmup = 0;
    while map.store().len() < b.target_points {
        if warmup >= b.max_warmup_frames {
            return Err(Error::Config(format!("map holds {} points after {warmup} warm-up frames, target {}", map.store().len(), b.target_points)));
        }
        let f = sim.next_frame()?.ok_or_else(|| Error::Config(format!("trajectory ended after {warmup} frames with {} live points", map.store().len())))?;
        map.integrate(&f)?;
        warmup += 1;
    }
    let start = map.store().len();
    let mut min_live = usize::MAX;
    let mut timings: Vec<StageTimings> = Vec::with_capacity(b.measured_frames);
    for _ in 0..b.measured_frames {
        let Some(f) = sim.next_frame()? else { break };
        let r = map.integrate_with(&f, None, true)?;
        timings.push(r.timings.expect("timed integration"));
        min_live = min_live.min(r.live_points);
    }
    if timings.is_empty() {
        return Err(Error::Config("trajectory ended before any measured frame".into()));
    }
    let col = |f: fn(&StageTimings) -> f64| timings.iter().map(f).collect::<Vec<_>>();
    let total = Latency::of(&col(|t| t.total_ms));
    Ok(BenchReport {
        format: "dynscene-bench-report".into(),
        threads: rayon::current_num_threads(),
        feature_dim: dim,
        warmup_frames: warmup,
        measured_frames: timings.len(),
        live_points_start: start,
        live_points_end: map.store().len(),
        min_live_points: min_live,
        cull: Latency::of(&col(|t| t.cull_ms)),
        add: Latency::of(&col(|t| t.add_ms)),
        merge: Latency::of(&col(|t| t.merge_ms)),
        zone: Latency::of(&col(|t| t.zone_ms)),
        within_budget: total.p95_ms <= b.budget_ms,
        total,
        budget_ms: b.budget_ms,
    })
}
