//! Single TOML configuration for every tolerance and harness knob, with
//! dotted-path overrides (`map.top_k=3`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CullParams;
use crate::instance::discriminator::MlpDiscriminator;
use crate::patch_store::PatchStore;
use crate::sim::dataset::SimSpec;
use crate::sim::trajectory::Trajectory;
use crate::sim::SceneSpec;
use crate::tokens::RayParams;
use crate::zone::ZoneGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapParams {
    pub feature_dim: usize,
    pub cell_size: f64,
    pub zone_size: f64,
    pub top_k: usize,
    pub near_tolerance: f64,
    pub horizon: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        let c = CullParams::default();
        Self {
            feature_dim: 768,
            cell_size: PatchStore::DEFAULT_CELL_SIZE,
            zone_size: ZoneGrid::DEFAULT_SIZE,
            top_k: 5,
            near_tolerance: c.near_tolerance,
            horizon: c.horizon,
        }
    }
}

impl MapParams {
    pub fn cull(&self) -> CullParams {
        CullParams { near_tolerance: self.near_tolerance, horizon: self.horizon, invert_depth_test: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.cull().validate()?;
        if self.feature_dim == 0 || self.feature_dim > u16::MAX as usize {
            return Err(Error::Config(format!("feature_dim {} out of range", self.feature_dim)));
        }
        if !(self.cell_size > 0.0) || !(self.zone_size > 0.0) || self.top_k == 0 {
            return Err(Error::Config("cell_size and zone_size must be positive, top_k >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    /// Ground-truth majority equality (simulator only).
    Oracle,
    Heuristic,
    /// Trained parameters loaded from `discriminator.params`.
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    /// Parameter file stem (`<stem>.bin` + `<stem>.json`).
    pub params: Option<PathBuf>,
    pub min_cosine: f64,
    pub max_distance: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { kind: DiscriminatorKind::Oracle, params: None, min_cosine: 0.8, max_distance: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Mean,
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    pub seed: u64,
    pub params: Option<PathBuf>,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self { kind: AggregatorKind::Mean, seed: 0, params: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.5, seed: 0, hidden: MlpDiscriminator::DEFAULT_HIDDEN, validation_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenConfig {
    pub ray_radius: f64,
    pub max_range: f64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        let r = RayParams::default();
        Self { ray_radius: r.radius, max_range: r.max_range }
    }
}

impl TokenConfig {
    pub fn rays(&self) -> RayParams {
        RayParams { radius: self.ray_radius, max_range: self.max_range }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Distance (m) beyond which an instance no longer describes its object.
    pub staleness_epsilon: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { staleness_epsilon: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub temperature: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self { temperature: crate::alignment::DEFAULT_TEMPERATURE }
    }
}

/// Latency workload: a large room surveyed on a grid so the map keeps growing
/// until `target_points` are live, then `measured_frames` are timed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub target_points: usize,
    pub measured_frames: usize,
    /// Give up if the map has not reached `target_points` after this many frames.
    pub max_warmup_frames: usize,
    pub budget_ms: f64,
    pub sim: SimSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let scene = SceneSpec { room_min: [-40.0, -3.0, -40.0], room_max: [40.0, 0.0, 40.0], object_count: 200, placement_outer: 38.0, ..Default::default() };
        let trajectory = Trajectory::Survey { min: [-38.0, -38.0], max: [38.0, 38.0], spacing: 4.0, eye_y: -1.4, yaws: 4 };
        // Culling can shave a few hundred points per frame; start above 50k so
        // every measured frame stays at or beyond it.
        Self {
            target_points: 52_000,
            measured_frames: 60,
            max_warmup_frames: 3000,
            budget_ms: 83.0,
            sim: SimSpec { seed: 0, scene, trajectory, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub map: MapParams,
    pub tokens: TokenConfig,
    pub alignment: AlignmentConfig,
    pub discriminator: DiscriminatorConfig,
    pub aggregator: AggregatorConfig,
    pub train: TrainConfig,
    pub replay: ReplayConfig,
    pub sim: SimSpec,
    pub bench: BenchConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text`, then applies `key.path=value` overrides where `value`
    /// is a TOML literal (bare strings are accepted as strings).
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut root, path.trim(), value)?;
        }
        let cfg: Config = root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        if !(self.alignment.temperature > 0.0) {
            return Err(Error::Config("alignment.temperature must be positive".into()));
        }
        if !(self.tokens.ray_radius >= 0.0 && self.tokens.max_range > 0.0) {
            return Err(Error::Config("tokens.ray_radius must be >= 0 and max_range > 0".into()));
        }
        if !(self.train.lr > 0.0) || !(0.0 < self.train.validation_fraction && self.train.validation_fraction < 1.0) || self.train.hidden == 0 {
            return Err(Error::Config("train.lr > 0, 0 < validation_fraction < 1 and hidden > 0 required".into()));
        }
        if !(self.replay.staleness_epsilon > 0.0) {
            return Err(Error::Config("replay.staleness_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|p| !p.is_empty()).ok_or_else(|| Error::Config(format!("empty override key {path:?}")))?;
    let mut table = root;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{p} in {path:?} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
