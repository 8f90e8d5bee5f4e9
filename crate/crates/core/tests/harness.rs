//! End-to-end checks of the replay, training and snapshot plumbing.

use dynscene::config::{Config, DiscriminatorKind, TrainConfig};
use dynscene::harness::verify::{point_multiset, small_sim};
use dynscene::harness::{self, replay, train};
use dynscene::instance::discriminator::LabeledPair;
use dynscene::sim::dataset::{self, Dataset};
use dynscene::sim::{EventKind, SceneEvent};
use dynscene::snapshot;
use dynscene::Error;

fn oracle_config() -> Config {
    let mut cfg = Config::default();
    cfg.discriminator.kind = DiscriminatorKind::Oracle;
    cfg
}

fn run(d: &Dataset, cfg: &Config, opts: replay::ReplayOptions<'_>) -> (dynscene::map::SceneMap, replay::ReplayReport) {
    replay::replay(d, cfg, opts).expect("replay")
}

#[test]
fn point_counts_reconcile_with_frame_reports() {
    let d = Dataset::in_memory(&small_sim(5, 16, 24)).unwrap();
    let (map, r) = run(&d, &oracle_config(), Default::default());
    let added: usize = r.frames.iter().map(|f| f.counts.added).sum();
    let culled: usize = r.frames.iter().map(|f| f.counts.culled).sum();
    assert_eq!(r.totals.added, added);
    assert_eq!(r.totals.culled, culled);
    assert_eq!(map.store().len(), r.totals.initial_points + added - culled);
    assert_eq!(r.summary.live_points, map.store().len());
}

#[test]
fn frame_reports_track_live_points() {
    let d = Dataset::in_memory(&small_sim(6, 16, 16)).unwrap();
    let (_, r) = run(&d, &oracle_config(), Default::default());
    let mut live = 0usize;
    for f in &r.frames {
        live = live + f.counts.added - f.counts.culled;
        assert_eq!(f.counts.live_points, live, "frame {}", f.counts.frame_id);
    }
}

/// Re-observing a static dataset reaches a steady state: the second and third
/// passes add and cull identical counts frame by frame.
#[test]
fn re_replay_from_snapshot_is_steady() {
    let cfg = oracle_config();
    let d = Dataset::in_memory(&small_sim(7, 16, 20)).unwrap();
    let (first, _) = run(&d, &cfg, Default::default());
    let dim = d.manifest.feature_dim;
    let bytes = snapshot::encode(&first);
    let load =
        |b: &[u8]| snapshot::decode(b, &cfg.map, harness::build_aggregator(&cfg, dim).unwrap(), harness::build_discriminator(&cfg, dim).unwrap()).unwrap();
    let (second_map, second) = run(&d, &cfg, replay::ReplayOptions { resume: Some(load(&bytes)), from_frame: Some(0), ..Default::default() });
    let (third_map, third) = run(&d, &cfg, replay::ReplayOptions { resume: Some(second_map), from_frame: Some(0), ..Default::default() });
    let counts = |r: &replay::ReplayReport| r.frames.iter().map(|f| (f.counts.added, f.counts.culled)).collect::<Vec<_>>();
    assert_eq!(counts(&second), counts(&third));
    assert_eq!(second.totals.added, second.totals.culled);
    assert_eq!(point_multiset(first.store()).len(), point_multiset(third_map.store()).len());
}

#[test]
fn resume_past_the_end_is_rejected() {
    let d = Dataset::in_memory(&small_sim(8, 8, 6)).unwrap();
    let cfg = oracle_config();
    let (map, _) = run(&d, &cfg, Default::default());
    let again = replay::replay(&d, &cfg, replay::ReplayOptions { resume: Some(map), until: Some(3), ..Default::default() });
    assert!(matches!(again, Err(Error::Dataset(_))));
}

#[test]
fn staleness_clears_after_a_removed_object_is_reobserved() {
    let mut spec = small_sim(9, 16, 60);
    if let dynscene::sim::trajectory::Trajectory::Orbit { turns, .. } = &mut spec.trajectory {
        *turns = 2.0;
    }
    spec.events = vec![SceneEvent { frame: 30, kind: EventKind::Remove { gt_id: 2 } }];
    let d = Dataset::in_memory(&spec).unwrap();
    let (_, r) = run(&d, &oracle_config(), Default::default());
    let peak = r.frames.iter().map(|f| f.stale).max().unwrap();
    assert!(peak > 0, "removal never produced a stale instance");
    assert_eq!(r.frames.last().unwrap().stale, 0, "stale counts {:?}", r.frames.iter().map(|f| f.stale).collect::<Vec<_>>());
}

fn harvested(seeds: &[u64]) -> Vec<LabeledPair> {
    let sets: Vec<_> = seeds.iter().map(|&s| Dataset::in_memory(&small_sim(s, 16, 30)).unwrap()).collect();
    train::harvest_pairs(&sets, &Config::default()).unwrap()
}

#[test]
fn untrained_discriminator_is_near_chance() {
    let tc = TrainConfig { epochs: 0, ..Default::default() };
    let (train_set, val) = train::split_pairs(harvested(&[11, 12]), &tc).unwrap();
    let (model, curve) = train::fit(&train_set, &val, 16, &tc).unwrap();
    assert_eq!(curve.len(), 1);
    let acc = model.accuracy(&val);
    assert!((acc - 0.5).abs() <= 0.1, "0-epoch validation accuracy {acc}");
}

#[test]
fn small_step_training_loss_never_increases() {
    let tc = TrainConfig { epochs: 40, lr: 0.01, ..Default::default() };
    let (train_set, val) = train::split_pairs(harvested(&[13]), &tc).unwrap();
    let (_, curve) = train::fit(&train_set, &val, 16, &tc).unwrap();
    for w in curve.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(curve.last().unwrap() < curve.first().unwrap());
}

#[test]
fn split_is_balanced_and_disjoint() {
    let tc = TrainConfig::default();
    let pairs = harvested(&[14]);
    let (train_set, val) = train::split_pairs(pairs.clone(), &tc).unwrap();
    for set in [&train_set, &val] {
        let pos = set.iter().filter(|p| p.label).count();
        assert_eq!(pos * 2, set.len());
    }
    assert_eq!(train::split_pairs(pairs, &tc).unwrap().1, val, "split is seeded");
}

#[test]
fn training_without_masks_fails() {
    let mut d = Dataset::in_memory(&small_sim(15, 8, 4)).unwrap();
    d.manifest.ground_truth_masks = false;
    assert!(matches!(train::harvest_pairs(&[d], &Config::default()), Err(Error::MissingGroundTruth)));
}

#[test]
fn written_dataset_replays_like_the_in_memory_one() {
    let spec = small_sim(16, 8, 6);
    let dir = tempfile::tempdir().unwrap();
    dataset::write_dataset(&spec, dir.path()).unwrap();
    let cfg = oracle_config();
    let (a, ra) = run(&Dataset::open(dir.path()).unwrap(), &cfg, Default::default());
    let (b, rb) = run(&Dataset::in_memory(&spec).unwrap(), &cfg, Default::default());
    assert_eq!(ra, rb);
    assert_eq!(snapshot::encode(&a), snapshot::encode(&b));
}

fn sample_snapshot() -> (Config, Vec<u8>) {
    let cfg = oracle_config();
    let d = Dataset::in_memory(&small_sim(17, 8, 5)).unwrap();
    let (map, _) = run(&d, &cfg, Default::default());
    (cfg, snapshot::encode(&map))
}

fn decode(cfg: &Config, bytes: &[u8]) -> dynscene::Result<dynscene::map::SceneMap> {
    let agg = harness::build_aggregator(cfg, 8).unwrap();
    let disc = harness::build_discriminator(cfg, 8).unwrap();
    snapshot::decode(bytes, &cfg.map, agg, disc)
}

#[test]
fn snapshot_rejects_unknown_versions() {
    let (cfg, mut bytes) = sample_snapshot();
    bytes[4..6].copy_from_slice(&(snapshot::VERSION + 1).to_le_bytes());
    assert!(matches!(decode(&cfg, &bytes), Err(Error::SnapshotVersion { .. })));
}

#[test]
fn snapshot_rejects_corruption() {
    let (cfg, bytes) = sample_snapshot();
    assert!(decode(&cfg, &bytes).is_ok());
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(decode(&cfg, &bad_magic), Err(Error::Snapshot(_))));
    for cut in [0, 3, 6, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode(&cfg, &bytes[..cut]).is_err(), "truncation at {cut} accepted");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode(&cfg, &trailing).is_err());
}

#[test]
fn snapshot_file_round_trip() {
    let (cfg, bytes) = sample_snapshot();
    let map = decode(&cfg, &bytes).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.snap");
    snapshot::save(&map, &path).unwrap();
    let agg = harness::build_aggregator(&cfg, 8).unwrap();
    let disc = harness::build_discriminator(&cfg, 8).unwrap();
    let back = snapshot::load(&path, &cfg.map, agg, disc).unwrap();
    assert_eq!(snapshot::encode(&back), bytes);
    assert_eq!(snapshot::peek_dim(&bytes).unwrap(), 8);
}

#[test]
fn snapshot_rejects_non_unit_features() {
    let (cfg, mut bytes) = sample_snapshot();
    // Header (48 bytes), point count (8), then 70 bytes of point fields before the feature.
    let at = 48 + 8 + 70;
    bytes[at..at + 4].copy_from_slice(&1e30f32.to_le_bytes());
    assert!(matches!(decode(&cfg, &bytes), Err(Error::Snapshot(_))));
}
