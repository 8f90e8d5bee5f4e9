//! One test per acceptance criterion. Each prints a single `ACn PASS|FAIL`
//! line to the real stdout (bypassing the test harness capture).

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dynscene::alignment::{self, ContrastiveBatch};
use dynscene::config::{Config, DiscriminatorKind};
use dynscene::geometry::{Point3, Pose};
use dynscene::harness::verify::{self, brute_force_cull, cull_workload, loss_gradient_error, multiset_distance, point_multiset, random_batch};
use dynscene::harness::{bench, replay, train};
use dynscene::instance::discriminator::{LabeledPair, MergingDiscriminator, MlpDiscriminator};
use dynscene::patch_store::{PatchStore, PointId};
use dynscene::sim::dataset::{Dataset, SimSpec, Simulation};
use dynscene::sim::trajectory::Trajectory;
use dynscene::sim::{generate_scene, EventKind, SceneEvent, SceneSpec};
use dynscene::snapshot;
use dynscene::tokens::{self, Action, PANORAMA_COLS, PANORAMA_RAYS};

fn report(id: &str, passed: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{id} {}: {detail}", if passed { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

/// Runs `body`, prints the criterion line and fails the test on a miss.
fn criterion(id: &str, body: impl FnOnce() -> Result<String, String>) {
    let t = Instant::now();
    let r = body();
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(d) => report(id, true, &format!("{d} ({secs:.1} s)")),
        Err(d) => {
            report(id, false, &format!("{d} ({secs:.1} s)"));
            panic!("{id} failed: {d}");
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

#[test]
fn ac1_cull_oracle_equality() {
    criterion("AC1", || {
        let params = Config::default().map.cull();
        let (store, frames) = cull_workload(11, 50_000, 100, 0.5).map_err(e)?;
        let (mut fast_t, mut slow_t) = (Duration::ZERO, Duration::ZERO);
        let mut culls = 0;
        for f in &frames {
            let t = Instant::now();
            let fast = store.cull_candidates(&f.depth, &f.pose, &f.intrinsics, &params);
            fast_t += t.elapsed();
            let t = Instant::now();
            let slow = brute_force_cull(&store, &f.depth, &f.pose, &f.intrinsics, &params);
            slow_t += t.elapsed();
            let fast: BTreeSet<PointId> = fast.into_iter().collect();
            ensure(fast == slow, || format!("frame {}: indexed {} vs brute force {}", f.frame_id, fast.len(), slow.len()))?;
            culls += slow.len();
        }
        ensure(culls > 0, || "workload culls nothing".into())?;
        let speedup = slow_t.as_secs_f64() / fast_t.as_secs_f64();
        ensure(speedup >= 5.0, || format!("indexed only {speedup:.1}x faster"))?;
        Ok(format!(
            "{} frames x {} points, {culls} culls identical, indexed {speedup:.1}x faster ({:.1} vs {:.1} ms)",
            frames.len(),
            store.len(),
            fast_t.as_secs_f64() * 1e3,
            slow_t.as_secs_f64() * 1e3
        ))
    });
}

#[test]
fn ac2_replay_idempotence() {
    criterion("AC2", || {
        let cull = Config::default().map.cull();
        let mut worst: f64 = 0.0;
        for case in 0..20u64 {
            let spec = SimSpec { seed: 200 + case, scene: SceneSpec { feature_dim: 32, ..Default::default() }, ..Default::default() };
            let mut sim = Simulation::new(&spec).map_err(e)?;
            let mut store = PatchStore::new(32, 0.5);
            let prefix = 3 * case as usize % 17;
            for _ in 0..prefix {
                let f = sim.next_frame().map_err(e)?.expect("frame");
                store.integrate_frame(&f, &cull).map_err(e)?;
            }
            let f = sim.next_frame().map_err(e)?.expect("frame");
            store.integrate_frame(&f, &cull).map_err(e)?;
            let once = point_multiset(&store);
            store.integrate_frame(&f, &cull).map_err(e)?;
            let twice = point_multiset(&store);
            let d = multiset_distance(&once, &twice).ok_or_else(|| format!("case {case}: multiset changed ({} -> {})", once.len(), twice.len()))?;
            ensure(d <= 1e-9, || format!("case {case}: deviation {d:e}"))?;
            worst = worst.max(d);
        }
        Ok(format!("20 cases, max deviation {worst:e}"))
    });
}

#[test]
fn ac3_incremental_equals_rebuild() {
    criterion("AC3", || {
        let mut runs = Vec::new();
        for (seed, attention) in [(1u64, false), (2, false), (3, false), (4, true)] {
            let mut cfg = Config::default();
            cfg.sim.seed = seed;
            if attention {
                cfg.aggregator.kind = dynscene::config::AggregatorKind::Attention;
            }
            let spec = verify::dynamic_spec(&cfg);
            ensure(spec.events.len() == 2, || "expected move and remove events".into())?;
            let mut sim = Simulation::new(&spec).map_err(e)?;
            let mut map = dynscene::harness::build_map(&cfg, spec.scene.feature_dim).map_err(e)?;
            let (mut merged, mut culled) = (0, 0);
            while let Some(f) = sim.next_frame().map_err(e)? {
                let r = map.integrate(&f).map_err(e)?;
                merged += r.merged;
                culled += r.culled;
                map.check(1e-6).map_err(|m| format!("seed {seed} frame {}: {m}", f.frame_id))?;
            }
            ensure(sim.len() == 50 && merged > 0 && culled > 0, || format!("seed {seed}: degenerate run"))?;
            runs.push(format!("seed {seed}{}: {merged} merges, {culled} culls", if attention { " (attention)" } else { "" }));
        }
        Ok(format!("checked after every frame; {}", runs.join("; ")))
    });
}

fn scene_spec(seed: u64) -> SimSpec {
    SimSpec { seed, ..Default::default() }
}

#[test]
fn ac4_merge_precision_and_trained_discriminator() {
    criterion("AC4", || {
        let cfg = Config::default();
        let (mut labeled, mut impure) = (0, 0);
        let eval: Vec<u64> = (0..10).collect();
        for &s in &eval {
            let d = Dataset::in_memory(&scene_spec(s)).map_err(e)?;
            let (_, r) = replay::replay(&d, &cfg, Default::default()).map_err(e)?;
            labeled += r.totals.labeled_merges;
            impure += r.totals.impure_merges;
        }
        ensure(labeled > 0 && impure == 0, || format!("oracle: {impure} impure of {labeled} labeled merges"))?;

        let training: Vec<Dataset> = (100..103).map(|s| Dataset::in_memory(&scene_spec(s))).collect::<Result<_, _>>().map_err(e)?;
        let (model, tr) = train::train_discriminator(&training, &cfg).map_err(e)?;
        drop(training);
        ensure(tr.validation_accuracy >= 0.99, || format!("held-out accuracy {}", tr.validation_accuracy))?;

        let dir = tempfile::tempdir().map_err(e)?;
        let stem = dir.path().join("disc");
        model.save(&stem).map_err(e)?;
        let mut mlp = cfg.clone();
        mlp.discriminator.kind = DiscriminatorKind::Mlp;
        mlp.discriminator.params = Some(stem);
        let (mut min_purity, mut unseen_correct, mut unseen_total) = (1.0f64, 0usize, 0usize);
        for &s in &eval {
            let d = Dataset::in_memory(&scene_spec(s)).map_err(e)?;
            let (_, r) = replay::replay(&d, &mlp, Default::default()).map_err(e)?;
            min_purity = min_purity.min(r.summary.purity);
            let pairs = train::harvest_pairs(std::slice::from_ref(&d), &cfg).map_err(e)?;
            unseen_total += pairs.len();
            unseen_correct += pairs.iter().filter(|p| (model.positive_probability(&p.input()) > 0.5) == p.label).count();
        }
        let unseen = unseen_correct as f64 / unseen_total as f64;
        ensure(min_purity >= 0.95, || format!("trained purity {min_purity}"))?;
        ensure(unseen >= 0.99, || format!("accuracy on unseen scenes {unseen}"))?;
        Ok(format!(
            "oracle 0/{labeled} impure; trained held-out accuracy {:.4}, unseen-scene accuracy {unseen:.4} over {unseen_total} pairs, min purity {min_purity:.4}",
            tr.validation_accuracy
        ))
    });
}

#[test]
fn ac5_loss_correctness() {
    criterion("AC5", || {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let tau = alignment::DEFAULT_TEMPERATURE;
        let losses: [fn(&ContrastiveBatch) -> dynscene::Result<alignment::LossOutput>; 2] = [alignment::loss_instance_text, alignment::loss_instance_distill];
        for _ in 0..20 {
            let b = random_batch(&mut rng, 1, 8, tau, false);
            for l in losses {
                let v = l(&b).map_err(e)?.value;
                ensure(v.abs() <= 1e-12, || format!("single-pair loss {v}"))?;
            }
            let anchored = random_batch(&mut rng, 1, 8, tau, true);
            let v = alignment::loss_subspace_distill(&anchored).map_err(e)?.value;
            ensure(v.abs() <= 1e-12, || format!("single-pair subspace loss {v}"))?;
        }
        for n in 2..=16 {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = ContrastiveBatch::new(vec![v.clone(); n], vec![v.clone(); n], tau);
            let anchored = b.clone().with_anchors(vec![vec![0.0; 8]; n]);
            for value in [alignment::loss_instance_text(&b), alignment::loss_instance_distill(&b), alignment::loss_subspace_distill(&anchored)] {
                let value = value.map_err(e)?.value;
                ensure((value - (n as f64).ln()).abs() <= 1e-9, || format!("uniform loss {value} != ln {n}"))?;
            }
        }
        for _ in 0..50 {
            let n = rng.random_range(1..8);
            let b = random_batch(&mut rng, n, 8, tau, false);
            let plain = alignment::loss_instance_distill(&b).map_err(e)?;
            let zero = alignment::loss_subspace_distill(&b.clone().with_anchors(vec![vec![0.0; 8]; n])).map_err(e)?;
            ensure(plain == zero, || "zero-anchor subspace loss differs from distillation loss".into())?;
        }
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            let n = 2 + i % 7;
            let dim = 3 + i % 6;
            let plain = random_batch(&mut rng, n, dim, tau, false);
            let anchored = random_batch(&mut rng, n, dim, tau, true);
            worst = worst.max(loss_gradient_error(&plain, alignment::loss_instance_text, 1e-4).map_err(e)?);
            worst = worst.max(loss_gradient_error(&plain, alignment::loss_instance_distill, 1e-4).map_err(e)?);
            worst = worst.max(loss_gradient_error(&anchored, alignment::loss_subspace_distill, 1e-4).map_err(e)?);
        }
        let model = MlpDiscriminator::seeded(6, 8, 3);
        let pairs: Vec<LabeledPair> = verify::random_pairs(&mut rng, 24, 6);
        let disc = verify::discriminator_gradient_error(&model, &pairs, 1e-6).map_err(e)?;
        ensure(worst <= 1e-4 && disc <= 1e-4, || format!("gradient relative error: losses {worst:e}, discriminator {disc:e}"))?;
        Ok(format!("single-pair 0, uniform ln N, zero anchors exact; 100 batches max rel err {worst:e}, discriminator {disc:e}"))
    });
}

/// Clearest floor spot at radius 1.5 from the room center, away from every object but `gt`.
fn free_spot(scene: &dynscene::sim::Scene, gt: u32) -> [f64; 2] {
    let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
    for i in 0..24 {
        let a = std::f64::consts::TAU * i as f64 / 24.0;
        let p = [1.5 * a.cos(), 1.5 * a.sin()];
        let old = scene.object(gt).expect("object").shape.center();
        let clearance = scene
            .objects
            .iter()
            .map(|o| {
                let c = if o.gt_id == gt { old } else { o.shape.center() };
                ((c.x - p[0]).powi(2) + (c.z - p[1]).powi(2)).sqrt() - o.shape.bounding_radius()
            })
            .fold(f64::INFINITY, f64::min);
        if clearance > best.1 {
            best = (p, clearance);
        }
    }
    best.0
}

#[test]
fn ac6_moved_object() {
    criterion("AC6", || {
        let cfg = Config::default();
        let mut lines = Vec::new();
        for seed in [21u64, 22, 23] {
            let scene = generate_scene(seed, &SceneSpec::default()).map_err(e)?;
            let gt = 1;
            let old = scene.object(gt).expect("object 1").shape.center();
            let to = free_spot(&scene, gt);
            let moved = dynscene::geometry::Point3::new(to[0], old.y, to[1]);
            let spec = SimSpec {
                seed,
                trajectory: Trajectory::Orbit {
                    center: [0.0, 0.0],
                    radius: 3.0,
                    eye_y: -1.4,
                    target_y: -0.4,
                    frames: 60,
                    turns: 2.0,
                    start_angle_deg: 0.0,
                    outward: false,
                },
                events: vec![SceneEvent { frame: 20, kind: EventKind::Move { gt_id: gt, center: [moved.x, moved.y, moved.z] } }],
                ..Default::default()
            };
            let d = Dataset::in_memory(&spec).map_err(e)?;
            let (map, _) = replay::replay(&d, &cfg, Default::default()).map_err(e)?;
            let near = |p: &Point3| map.instances().iter().filter(|i| i.majority_gt() == Some(gt) && (i.centroid - p).norm() <= 0.5).count();
            let (at_old, at_new) = (near(&old), near(&moved));
            ensure(at_old == 0 && at_new == 1, || format!("seed {seed}: {at_old} instances near the vacated spot, {at_new} near the new one"))?;
            lines.push(format!("seed {seed}: moved {:.2} m", (moved - old).norm()));
        }
        Ok(format!("0 instances at vacated spot, 1 at new spot; {}", lines.join(", ")))
    });
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// The deterministic prompt whose serialization is committed under `tests/golden`.
fn golden_prompt() -> dynscene::Result<tokens::PromptPayload> {
    let spec = verify::small_sim(3, 8, 12);
    let d = Dataset::in_memory(&spec)?;
    let (map, _) = replay::replay(&d, &Config::default(), Default::default())?;
    let history = [Action::turn_left(30.0)?, Action::forward(75.5)?, Action::turn_right(15.0)?];
    map.prompt(&Pose::from_yaw(Point3::new(0.3, -1.2, -0.4), 0.5), &Config::default().tokens.rays(), "Walk past the table and stop at the door.", &history)
}

fn random_action_string(rng: &mut ChaCha8Rng) -> (String, String) {
    let kind = rng.random_range(0..4);
    if kind == 3 {
        return ("Stop.".into(), "Stop.".into());
    }
    let (name, unit, max) = match kind {
        0 => ("Turn left", "degree.", 1800u32),
        1 => ("Turn right", "degree.", 1800),
        _ => ("Forward", "cm.", 5000),
    };
    let tenths = rng.random_range(1..=max);
    let canonical_num = if tenths % 10 == 0 { format!("{}", tenths / 10) } else { format!("{}.{}", tenths / 10, tenths % 10) };
    let mut num = match (tenths % 10 == 0, rng.random_range(0..3)) {
        (true, 0) => format!("{}.0", tenths / 10),
        _ => canonical_num.clone(),
    };
    if rng.random_bool(0.1) && num.len() < 6 {
        num.insert(0, '0');
    }
    let pad = |rng: &mut ChaCha8Rng| [" ", "\t", "\n", "  ", ""][rng.random_range(0..5)].to_string();
    let text = format!("{}{name} {num} {unit}{}", pad(rng), pad(rng));
    (text, format!("{name} {canonical_num} {unit}"))
}

#[test]
fn ac7_token_contract() {
    criterion("AC7", || {
        for i in 0..PANORAMA_RAYS {
            let (row, col) = (i / PANORAMA_COLS, i % PANORAMA_COLS);
            let d = tokens::panorama_direction(i);
            let e_deg: f64 = 41.25 - 7.5 * row as f64;
            let a_deg: f64 = 180.0 + 7.5 * col as f64;
            let want = [e_deg.to_radians().cos() * a_deg.to_radians().sin(), -e_deg.to_radians().sin(), e_deg.to_radians().cos() * a_deg.to_radians().cos()];
            ensure((0..3).all(|k| (d[k] - want[k]).abs() <= 1e-12), || format!("ray {i} direction {d:?}"))?;
        }
        // Clockwise seen from above with +y down: a quarter step of columns turns right.
        ensure(tokens::panorama_direction(5 * PANORAMA_COLS + 24).z > 0.99 && tokens::panorama_direction(5 * PANORAMA_COLS + 36).x > 0.99, || {
            "column order is not clockwise from behind".into()
        })?;

        let prompt = golden_prompt().map_err(e)?;
        let sorted = |v: Vec<f64>| v.windows(2).all(|w| w[0] <= w[1]);
        ensure(sorted(prompt.instance_tokens.iter().map(|t| t.relpos.distance()).collect()), || "instance tokens out of order".into())?;
        ensure(sorted(prompt.zone_tokens.iter().map(|t| t.relpos.distance()).collect()), || "zone tokens out of order".into())?;
        ensure(prompt.patch_tokens.len() == 576 && !prompt.instance_tokens.is_empty() && !prompt.zone_tokens.is_empty(), || "unexpected token counts".into())?;

        let text = prompt.text();
        let sidecar = prompt.sidecar().encode().map_err(e)?;
        let dir = golden_dir();
        if std::env::var_os("DYNSCENE_BLESS").is_some() {
            std::fs::create_dir_all(&dir).map_err(e)?;
            std::fs::write(dir.join("prompt.txt"), &text).map_err(e)?;
            std::fs::write(dir.join("prompt_sidecar.bin"), &sidecar).map_err(e)?;
        }
        let want_text = std::fs::read_to_string(dir.join("prompt.txt")).map_err(e)?;
        let want_sidecar = std::fs::read(dir.join("prompt_sidecar.bin")).map_err(e)?;
        ensure(text == want_text, || "prompt text differs from golden".into())?;
        ensure(sidecar == want_sidecar, || "sidecar differs from golden".into())?;

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (s, canonical) = random_action_string(&mut rng);
            let a = Action::parse(&s).map_err(|err| format!("{s:?}: {err}"))?;
            ensure(a.to_string() == canonical, || format!("{s:?} formats as {a}, expected {canonical}"))?;
            ensure(Action::parse(&a.to_string()).map_err(e)? == a, || format!("{canonical} does not round-trip"))?;
        }
        Ok(format!(
            "576 rays analytic, {} instance / {} zone tokens sorted, golden text and sidecar match, 1000 action strings round-trip",
            prompt.instance_tokens.len(),
            prompt.zone_tokens.len()
        ))
    });
}

#[test]
fn ac8_persistence() {
    criterion("AC8", || {
        let cfg = Config { sim: SimSpec { seed: 5, ..Default::default() }, ..Default::default() };
        let d = Dataset::in_memory(&verify::dynamic_spec(&cfg)).map_err(e)?;
        let (full_map, full) = replay::replay(&d, &cfg, Default::default()).map_err(e)?;

        let dir = tempfile::tempdir().map_err(e)?;
        let (a, b) = (dir.path().join("a.dyn"), dir.path().join("b.dyn"));
        snapshot::save(&full_map, &a).map_err(e)?;
        let dim = full_map.params().feature_dim;
        let loaded = snapshot::load(
            &a,
            &cfg.map,
            dynscene::harness::build_aggregator(&cfg, dim).map_err(e)?,
            dynscene::harness::build_discriminator(&cfg, dim).map_err(e)?,
        )
        .map_err(e)?;
        snapshot::save(&loaded, &b).map_err(e)?;
        ensure(std::fs::read(&a).map_err(e)? == std::fs::read(&b).map_err(e)?, || "save -> load -> save differs".into())?;

        let split = 23;
        let (half, _) = replay::replay(&d, &cfg, replay::ReplayOptions { until: Some(split), ..Default::default() }).map_err(e)?;
        let bytes = snapshot::encode(&half);
        let resumed_map = snapshot::decode(
            &bytes,
            &cfg.map,
            dynscene::harness::build_aggregator(&cfg, dim).map_err(e)?,
            dynscene::harness::build_discriminator(&cfg, dim).map_err(e)?,
        )
        .map_err(e)?;
        let (end_map, resumed) = replay::replay(&d, &cfg, replay::ReplayOptions { resume: Some(resumed_map), ..Default::default() }).map_err(e)?;
        ensure(resumed.summary == full.summary, || format!("summaries differ: {:?} vs {:?}", resumed.summary, full.summary))?;
        ensure(resumed.frames[..] == full.frames[split..], || "per-frame records after the split differ".into())?;
        ensure(snapshot::encode(&end_map) == snapshot::encode(&full_map), || "final maps differ".into())?;
        Ok(format!("snapshot of {} bytes byte-identical; resumed at frame {split}, final report and map identical", std::fs::metadata(&a).map_err(e)?.len()))
    });
}

#[test]
fn ac9_realtime_envelope() {
    criterion("AC9", || {
        let r = bench::bench(&Config::default()).map_err(e)?;
        let detail = format!(
            "{} frames at {}..{} live points on {} thread(s): p50 {:.2} ms, p95 {:.2} ms (budget {} ms)",
            r.measured_frames, r.min_live_points, r.live_points_end, r.threads, r.total.p50_ms, r.total.p95_ms, r.budget_ms
        );
        ensure(r.min_live_points >= 50_000, || format!("map fell below 50k points; {detail}"))?;
        ensure(r.within_budget, || detail.clone())?;
        Ok(detail)
    });
}
