//! Oracle suites run by the `verify` command. Each suite compares an
//! optimized path against an independent brute-force reference.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, ContrastiveBatch, LossOutput};
use crate::config::Config;
use crate::error::Result;
use crate::frame::ObservationFrame;
use crate::geometry::{CameraIntrinsics, CullParams, DepthMap, Point3, Pose};
use crate::instance::discriminator::{LabeledPair, MlpDiscriminator};
use crate::map::SceneMap;
use crate::patch_store::{PatchStore, PointId};
use crate::sim::dataset::{ImageSpec, SimSpec, Simulation};
use crate::sim::trajectory::Trajectory;
use crate::sim::{EventKind, SceneEvent, SceneSpec};
use crate::snapshot;
use crate::tokens::{self, sidecar::Sidecar, Action, PANORAMA_COLS, PANORAMA_RAYS};

pub const SUITES: [&str; 6] = ["cull_equality", "replay_idempotence", "incremental_rebuild", "gradient_checks", "codec_roundtrip", "token_geometry"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Flip the depth inequality of the indexed cull path.
    Cull,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format: String,
    pub passed: bool,
    pub fault: Option<Fault>,
    pub suites: Vec<SuiteResult>,
}

fn outcome(name: &str, r: Result<std::result::Result<String, String>>) -> SuiteResult {
    let (passed, detail) = match r {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(e) => (false, format!("error: {e}")),
    };
    SuiteResult { name: name.into(), passed, detail }
}

pub fn verify(cfg: &Config, fault: Option<Fault>) -> VerifyReport {
    let seed = cfg.sim.seed;
    let mut cull = cfg.map.cull();
    cull.invert_depth_test = fault == Some(Fault::Cull);
    let dynamic = dynamic_spec(cfg);
    let mut replayed: Option<SceneMap> = None;
    let suites = vec![
        outcome(SUITES[0], cull_equality(seed, 20_000, 20, &cfg.map.cull(), &cull)),
        outcome(SUITES[1], replay_idempotence(seed, 20, cfg.map.cell_size, &cfg.map.cull())),
        outcome(
            SUITES[2],
            incremental_rebuild(cfg, &dynamic).map(|r| {
                r.map(|(map, detail)| {
                    replayed = Some(map);
                    detail
                })
            }),
        ),
        outcome(SUITES[3], gradient_checks(seed, 20)),
        outcome(SUITES[4], codec_roundtrip(cfg, replayed.as_ref())),
        outcome(SUITES[5], token_geometry(cfg, replayed.as_ref())),
    ];
    VerifyReport { format: "dynscene-verify-report".into(), passed: suites.iter().all(|s| s.passed), fault, suites }
}

/// Camera orbit inside the default 8 m room, with points scattered uniformly
/// over a 40 m square around it (most of a grown map lies outside any one view).
pub fn cull_workload(seed: u64, points: usize, frames: usize, cell_size: f64) -> Result<(PatchStore, Vec<ObservationFrame>)> {
    let scene = SceneSpec { feature_dim: 4, ..Default::default() };
    let spec = SimSpec {
        seed,
        image: ImageSpec::default(),
        trajectory: Trajectory::Orbit {
            center: [0.0, 0.0],
            radius: 2.5,
            eye_y: -1.5,
            target_y: -0.8,
            frames,
            turns: 1.0,
            start_angle_deg: 0.0,
            outward: false,
        },
        scene,
        ..Default::default()
    };
    let mut sim = Simulation::new(&spec)?;
    let mut out = Vec::with_capacity(frames);
    while let Some(f) = sim.next_frame()? {
        out.push(f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut store = PatchStore::new(4, cell_size);
    let (lo, hi) = (spec.scene.room_min, spec.scene.room_max);
    for i in 0..points {
        let p = Point3::new(rng.random_range(-20.0..20.0), rng.random_range(lo[1]..hi[1]), rng.random_range(-20.0..20.0));
        let f = [rng.random::<f32>() + 0.1, 0.0, 0.0, 0.0];
        store.insert(&f, p, 0.0, 0.1, 0, (i % 576) as u16, None)?;
    }
    Ok((store, out))
}

/// Reference cull: projects every stored point without the index or the
/// shared predicate.
pub fn brute_force_cull(store: &PatchStore, depth: &DepthMap, pose: &Pose, k: &CameraIntrinsics, params: &CullParams) -> BTreeSet<PointId> {
    let r = &pose.rotation;
    let t = &pose.translation;
    store
        .iter()
        .filter(|p| {
            let w = p.position;
            let x = r[(0, 0)] * w.x + r[(0, 1)] * w.y + r[(0, 2)] * w.z + t.x;
            let y = r[(1, 0)] * w.x + r[(1, 1)] * w.y + r[(1, 2)] * w.z + t.y;
            let z = r[(2, 0)] * w.x + r[(2, 1)] * w.y + r[(2, 2)] * w.z + t.z;
            if z <= 0.0 {
                return false;
            }
            let u = (k.fy * y / z + k.cy).round();
            let v = (k.fx * x / z + k.cx).round();
            if u <= 0.0 || v <= 0.0 || u >= k.height as f64 || v >= k.width as f64 {
                return false;
            }
            let d = depth.data[u as usize * depth.width + v as usize] as f64;
            let d = if d.is_finite() && d > 0.0 { d } else { f64::INFINITY };
            z < (d + params.near_tolerance).min(params.horizon)
        })
        .map(|p| p.id)
        .collect()
}

/// Indexed cull candidates (under `indexed`) against the reference (under `reference`).
pub fn cull_equality(seed: u64, points: usize, frames: usize, reference: &CullParams, indexed: &CullParams) -> Result<std::result::Result<String, String>> {
    let (store, frames) = cull_workload(seed, points, frames, 0.5)?;
    let mut total = 0;
    for f in &frames {
        let fast: BTreeSet<PointId> = store.cull_candidates(&f.depth, &f.pose, &f.intrinsics, indexed).into_iter().collect();
        let slow = brute_force_cull(&store, &f.depth, &f.pose, &f.intrinsics, reference);
        if fast != slow {
            let extra = fast.difference(&slow).count();
            let missing = slow.difference(&fast).count();
            return Ok(Err(format!("frame {}: {extra} extra, {missing} missing of {}", f.frame_id, slow.len())));
        }
        total += slow.len();
    }
    Ok(Ok(format!("{} frames, {points} points, {total} culls matched", frames.len())))
}

type PointKey = (Vec<u64>, Vec<u32>, u64, u16, Option<u32>, u64, u64);

/// Order-independent view of the store with ids stripped.
pub fn point_multiset(store: &PatchStore) -> Vec<PointKey> {
    let mut v: Vec<PointKey> = store
        .iter()
        .map(|p| {
            let pos = (0..3).map(|a| p.position[a].to_bits()).collect();
            let f = p.feature.iter().map(|x| x.to_bits()).collect();
            (pos, f, p.frame_id, p.patch_index, p.gt_instance, p.heading.to_bits(), p.size.to_bits())
        })
        .collect();
    v.sort();
    v
}

/// Largest coordinate difference between two equal-length multisets, or
/// `None` when they differ in size or non-geometric content.
pub fn multiset_distance(a: &[PointKey], b: &[PointKey]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.1 != y.1 || x.2 != y.2 || x.3 != y.3 || x.4 != y.4 {
            return None;
        }
        for i in 0..3 {
            worst = worst.max((f64::from_bits(x.0[i]) - f64::from_bits(y.0[i])).abs());
        }
        worst = worst.max((f64::from_bits(x.5) - f64::from_bits(y.5)).abs()).max((f64::from_bits(x.6) - f64::from_bits(y.6)).abs());
    }
    Some(worst)
}

/// Small seeded scene observed along an orbit at low resolution.
pub fn small_sim(seed: u64, dim: usize, frames: usize) -> SimSpec {
    SimSpec {
        seed,
        scene: SceneSpec { feature_dim: dim, ..Default::default() },
        image: ImageSpec { hfov_deg: 90.0, height: 96, width: 96 },
        trajectory: Trajectory::Orbit {
            center: [0.0, 0.0],
            radius: 3.0,
            eye_y: -1.4,
            target_y: -0.4,
            frames,
            turns: 1.0,
            start_angle_deg: 0.0,
            outward: false,
        },
        ..Default::default()
    }
}

/// Integrating the same frame twice leaves the point multiset unchanged.
pub fn replay_idempotence(seed: u64, cases: usize, cell_size: f64, cull: &CullParams) -> Result<std::result::Result<String, String>> {
    let mut worst: f64 = 0.0;
    for case in 0..cases as u64 {
        let mut sim = Simulation::new(&small_sim(seed.wrapping_add(case), 8, 8))?;
        let mut store = PatchStore::new(8, cell_size);
        let prefix = 1 + (case as usize % 6);
        let mut frames = Vec::new();
        while let Some(f) = sim.next_frame()? {
            frames.push(f);
        }
        for f in &frames[..prefix] {
            store.integrate_frame(f, cull)?;
        }
        let f = &frames[prefix];
        store.integrate_frame(f, cull)?;
        let once = point_multiset(&store);
        store.integrate_frame(f, cull)?;
        let twice = point_multiset(&store);
        match multiset_distance(&once, &twice) {
            Some(d) if d <= 1e-9 => worst = worst.max(d),
            Some(d) => return Ok(Err(format!("case {case}: coordinates moved by {d:e}"))),
            None => return Ok(Err(format!("case {case}: multiset changed ({} -> {} points)", once.len(), twice.len()))),
        }
    }
    Ok(Ok(format!("{cases} cases, max deviation {worst:e}")))
}

/// The config's simulation, trimmed to 50 frames, with a move and a removal
/// event when it has none.
pub fn dynamic_spec(cfg: &Config) -> SimSpec {
    let mut spec = cfg.sim.clone();
    if let Trajectory::Orbit { frames, .. } = &mut spec.trajectory {
        *frames = (*frames).min(50);
    }
    if spec.events.is_empty() && spec.scene.object_count >= 2 {
        let floor = spec.scene.room_max[1];
        spec.events = vec![
            SceneEvent { frame: 20, kind: EventKind::Move { gt_id: 1, center: [2.6, floor - 0.3, 2.6] } },
            SceneEvent { frame: 32, kind: EventKind::Remove { gt_id: 2 } },
        ];
    }
    spec
}

/// After every frame of a dynamic replay, instance and zone features equal
/// from-scratch re-aggregation within 1e-6.
pub fn incremental_rebuild(cfg: &Config, spec: &SimSpec) -> Result<std::result::Result<(SceneMap, String), String>> {
    let mut sim = Simulation::new(spec)?;
    let mut map = super::build_map(cfg, spec.scene.feature_dim)?;
    let (mut merged, mut culled, mut discarded) = (0, 0, 0);
    while let Some(f) = sim.next_frame()? {
        let r = map.integrate(&f)?;
        merged += r.merged;
        culled += r.culled;
        discarded += r.discarded;
        if let Err(e) = map.check(1e-6) {
            return Ok(Err(format!("frame {}: {e}", f.frame_id)));
        }
    }
    let detail = format!("{} frames, {merged} merges, {culled} culls, {discarded} discarded instances", sim.len());
    Ok(Ok((map, detail)))
}

/// Max relative error between analytic gradients and a fourth-order central
/// difference with step `h`.
pub fn loss_gradient_error(batch: &ContrastiveBatch, loss: fn(&ContrastiveBatch) -> Result<LossOutput>, h: f64) -> Result<f64> {
    let analytic = loss(batch)?.grad;
    let mut worst: f64 = 0.0;
    let mut b = batch.clone();
    for i in 0..b.candidates.len() {
        for k in 0..b.candidates[i].len() {
            let x = b.candidates[i][k];
            let mut at = |dx: f64| {
                b.candidates[i][k] = x + dx;
                loss(&b).map(|o| o.value)
            };
            let fd = (at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h);
            b.candidates[i][k] = x;
            worst = worst.max(relative_error(analytic[i][k], fd));
        }
    }
    Ok(worst)
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// A seeded batch of `n` vectors of dimension `dim` with optional anchors.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, tau: f64, anchors: bool) -> ContrastiveBatch {
    let mut v = |count: usize| (0..count).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect::<Vec<Vec<f64>>>();
    let b = ContrastiveBatch::new(v(n), v(n), tau);
    if anchors {
        let a = v(n).into_iter().map(|x| x.into_iter().map(|c| 0.3 * c).collect()).collect();
        b.with_anchors(a)
    } else {
        b
    }
}

pub fn discriminator_gradient_error(model: &MlpDiscriminator, pairs: &[LabeledPair], h: f64) -> Result<f64> {
    let (_, grad) = model.loss_and_grad(pairs)?;
    let base = model.mlp.flat_params();
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    for (i, g) in grad.iter().enumerate() {
        let mut p = base.clone();
        p[i] += h;
        m.mlp.set_flat_params(&p);
        let up = m.loss_and_grad(pairs)?.0;
        p[i] -= 2.0 * h;
        m.mlp.set_flat_params(&p);
        let down = m.loss_and_grad(pairs)?.0;
        worst = worst.max(relative_error(*g, (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<LabeledPair> {
    (0..n)
        .map(|i| LabeledPair {
            o2d: (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            o3d: (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            distance: rng.random_range(0.0..3.0),
            label: i % 2 == 0,
        })
        .collect()
}

pub fn gradient_checks(seed: u64, batches: usize) -> Result<std::result::Result<String, String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let mut worst: f64 = 0.0;
    for b in 0..batches {
        let n = 2 + b % 5;
        let plain = random_batch(&mut rng, n, 6, alignment::DEFAULT_TEMPERATURE, false);
        let anchored = random_batch(&mut rng, n, 6, alignment::DEFAULT_TEMPERATURE, true);
        worst = worst.max(loss_gradient_error(&plain, alignment::loss_instance_text, 1e-4)?);
        worst = worst.max(loss_gradient_error(&plain, alignment::loss_instance_distill, 1e-4)?);
        worst = worst.max(loss_gradient_error(&anchored, alignment::loss_subspace_distill, 1e-4)?);
    }
    let model = MlpDiscriminator::seeded(5, 4, seed);
    let pairs = random_pairs(&mut rng, 12, 5);
    let disc = discriminator_gradient_error(&model, &pairs, 1e-6)?;
    let detail = format!("{batches} batches, loss max rel err {worst:e}, discriminator {disc:e}");
    Ok(if worst <= 1e-4 && disc <= 1e-4 { Ok(detail) } else { Err(detail) })
}

pub fn codec_roundtrip(cfg: &Config, map: Option<&SceneMap>) -> Result<std::result::Result<String, String>> {
    let Some(map) = map else { return Ok(Err("no replayed map (incremental_rebuild failed)".into())) };
    let bytes = snapshot::encode(map);
    let loaded = snapshot::decode(
        &bytes,
        map.params(),
        super::build_aggregator(cfg, map.params().feature_dim)?,
        super::build_discriminator(cfg, map.params().feature_dim)?,
    )?;
    if snapshot::encode(&loaded) != bytes {
        return Ok(Err("snapshot re-encode differs".into()));
    }
    let mut actions = vec![Action::Stop];
    for tenths in [1u32, 5, 150, 300, 1799, 1800] {
        actions.push(Action::TurnLeft(tenths));
        actions.push(Action::TurnRight(tenths));
    }
    for tenths in [1u32, 250, 755, 5000] {
        actions.push(Action::Forward(tenths));
    }
    for a in &actions {
        if Action::parse(&a.to_string())? != *a {
            return Ok(Err(format!("action {a} does not round-trip")));
        }
    }
    let prompt = map.prompt(&Pose::identity(), &cfg.tokens.rays(), "find the chair", &actions[1..3])?;
    let sidecar = prompt.sidecar();
    if Sidecar::decode(&sidecar.encode()?)? != sidecar {
        return Ok(Err("sidecar does not round-trip".into()));
    }
    Ok(Ok(format!("snapshot {} bytes, {} actions, sidecar {} tokens", bytes.len(), actions.len(), sidecar.tokens.len())))
}

pub fn token_geometry(cfg: &Config, map: Option<&SceneMap>) -> Result<std::result::Result<String, String>> {
    for i in 0..PANORAMA_RAYS {
        let (row, col) = (i / PANORAMA_COLS, i % PANORAMA_COLS);
        let d = tokens::panorama_direction(i);
        let elevation = (-d.y).asin().to_degrees();
        let azimuth = d.x.atan2(d.z).to_degrees().rem_euclid(360.0);
        let want_az = (180.0 + 7.5 * col as f64).rem_euclid(360.0);
        let az_err = (azimuth - want_az).abs().min(360.0 - (azimuth - want_az).abs());
        if (d.norm() - 1.0).abs() > 1e-12 || (elevation - (41.25 - 7.5 * row as f64)).abs() > 1e-9 || az_err > 1e-9 {
            return Ok(Err(format!("ray {i} points at elevation {elevation}, azimuth {azimuth}")));
        }
    }
    let Some(map) = map else { return Ok(Err("no replayed map (incremental_rebuild failed)".into())) };
    let agent = Pose::from_yaw(Point3::new(0.5, -1.2, -0.5), 0.7);
    let prompt = map.prompt(&agent, &cfg.tokens.rays(), "", &[])?;
    let center = agent.center();
    for t in &prompt.instance_tokens {
        let c = map.instances().get(t.id).expect("token of a live instance").centroid;
        if ((c - center).norm() - t.relpos.distance()).abs() > 1e-9 {
            return Ok(Err(format!("instance {} distance mismatch", t.id.0)));
        }
    }
    let sorted = |d: Vec<f64>| d.windows(2).all(|w| w[0] <= w[1]);
    if !sorted(prompt.instance_tokens.iter().map(|t| t.relpos.distance()).collect())
        || !sorted(prompt.zone_tokens.iter().map(|t| t.relpos.distance()).collect())
    {
        return Ok(Err("tokens not in distance order".into()));
    }
    let valid = prompt.patch_tokens.iter().filter(|t| t.valid).count();
    Ok(Ok(format!("{PANORAMA_RAYS} rays, {} instance and {} zone tokens, {valid} resolved patches", prompt.instance_tokens.len(), prompt.zone_tokens.len())))
}
