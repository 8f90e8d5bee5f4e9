use proptest::prelude::*;

use dynscene::config::Config;
use dynscene::geometry::{self, CameraIntrinsics, CullParams, DepthMap, Point3, Pose};
use dynscene::harness;
use dynscene::harness::verify::{brute_force_cull, small_sim};
use dynscene::nn::{Activation, Mlp, ParamSidecar};
use dynscene::patch_store::PatchStore;
use dynscene::sim::dataset::{decode_frame, Dataset, Manifest};
use dynscene::snapshot;
use dynscene::tokens::sidecar::Sidecar;
use dynscene::tokens::Action;

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (-5.0..5.0f64, -3.0..0.0f64, -5.0..5.0f64, -3.2..3.2f64).prop_map(|(x, y, z, yaw)| Pose::from_yaw(Point3::new(x, y, z), yaw))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unproject_inverts_project(pose in pose_strategy(), u in 0.0..224.0f64, v in 0.0..224.0f64, d in 0.1..20.0f64) {
        let k = CameraIntrinsics::from_hfov(90.0, 224, 224).unwrap();
        let p = geometry::unproject(u, v, d, &k, &pose).unwrap();
        let px = geometry::project(&p, &pose, &k).unwrap();
        prop_assert!((px.u - u).abs() < 1e-8 && (px.v - v).abs() < 1e-8 && (px.z_c - d).abs() < 1e-9);
    }

    #[test]
    fn action_display_parses_back(kind in 0..4u8, tenths in 1u32..1000) {
        let a = match kind {
            0 => Action::turn_left(tenths as f64 / 10.0),
            1 => Action::turn_right(tenths as f64 / 10.0),
            2 => Action::forward(tenths as f64 / 10.0),
            _ => Ok(Action::Stop),
        };
        if let Ok(a) = a {
            prop_assert_eq!(Action::parse(&a.to_string()).unwrap(), a);
        }
    }

    #[test]
    fn action_parse_never_panics(s in "\\PC{0,40}") {
        let _ = Action::parse(&s);
    }

    #[test]
    fn sidecar_decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = Sidecar::decode(&bytes);
    }

    #[test]
    fn manifest_parse_never_panics(s in "\\PC{0,200}") {
        let _ = Manifest::parse(&s);
    }

    #[test]
    fn params_decode_never_panics(blob in proptest::collection::vec(any::<u8>(), 0..512), json in "\\PC{0,120}") {
        if let Ok(sc) = serde_json::from_str::<ParamSidecar>(&json) {
            let _ = Mlp::from_parts(&sc, &blob);
        }
        let good = Mlp::seeded(&[4, 6, 2], Activation::Relu, 1, 1.0).sidecar("test");
        let _ = Mlp::from_parts(&good, &blob);
    }

    /// Random stores at random poses: the indexed cull removes exactly the
    /// brute-force set.
    #[test]
    fn indexed_cull_matches_brute_force(
        pose in pose_strategy(),
        pts in proptest::collection::vec((-8.0..8.0f64, -3.0..0.0f64, -8.0..8.0f64), 1..300),
        depth in 0.3..6.0f32,
        cell in prop_oneof![Just(0.25), Just(0.5), Just(1.0)],
    ) {
        let k = CameraIntrinsics::from_hfov(90.0, 24, 24).unwrap();
        let mut store = PatchStore::new(2, cell);
        for (i, (x, y, z)) in pts.iter().enumerate() {
            store.insert(&[1.0, 0.0], Point3::new(*x, *y, *z), 0.0, 0.1, 0, (i % 256) as u16, None).unwrap();
        }
        let d = DepthMap::filled(24, 24, depth);
        let params = CullParams::default();
        let expect = brute_force_cull(&store, &d, &pose, &k, &params);
        let got = store.cull_candidates(&d, &pose, &k, &params);
        prop_assert_eq!(got.into_iter().collect::<std::collections::BTreeSet<_>>(), expect);
    }
}

fn snapshot_bytes() -> (Config, Vec<u8>) {
    let cfg = Config::default();
    let d = Dataset::in_memory(&small_sim(3, 4, 3)).unwrap();
    let (map, _) = harness::replay::replay(&d, &cfg, Default::default()).unwrap();
    (cfg, snapshot::encode(&map))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn snapshot_decode_survives_bit_flips(flips in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8), cut in any::<prop::sample::Index>()) {
        let (cfg, mut bytes) = snapshot_bytes();
        for (i, x) in &flips {
            let i = i.index(bytes.len());
            bytes[i] ^= x | 1;
        }
        let cut = cut.index(bytes.len() + 1);
        let agg = harness::build_aggregator(&cfg, 4).unwrap();
        let disc = harness::build_discriminator(&cfg, 4).unwrap();
        let _ = snapshot::decode(&bytes[..cut], &cfg.map, agg, disc);
    }

    #[test]
    fn frame_decode_never_panics(f in proptest::collection::vec(any::<u8>(), 0..64), depth in proptest::collection::vec(any::<u8>(), 0..64), masks in proptest::collection::vec(any::<u8>(), 0..64), index in 0usize..4) {
        let d = Dataset::in_memory(&small_sim(3, 4, 2)).unwrap();
        let _ = decode_frame(&d.manifest, index, &f, &depth, &masks);
    }
}
