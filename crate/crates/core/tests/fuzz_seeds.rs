//! The checked-in fuzz seeds stay valid inputs, so the fuzzers start from
//! inputs that reach the deep decode paths.

use std::path::PathBuf;

use dynscene::config::Config;
use dynscene::harness::{self, verify::small_sim};
use dynscene::nn::{Mlp, ParamSidecar};
use dynscene::sim::dataset::{decode_frame, Dataset, ImageSpec, Manifest};
use dynscene::snapshot;
use dynscene::tokens::{Action, Sidecar};

fn seed(target: &str, name: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fuzz", "corpus", target, &format!("seed-{name}")].iter().collect();
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn snapshot_seed_round_trips() {
    let bytes = seed("snapshot_decode", "map");
    let cfg = Config::default();
    let dim = snapshot::peek_dim(&bytes).unwrap();
    let map = snapshot::decode(&bytes, &cfg.map, harness::build_aggregator(&cfg, dim).unwrap(), harness::build_discriminator(&cfg, dim).unwrap()).unwrap();
    assert_eq!(snapshot::encode(&map), bytes);
}

#[test]
fn sidecar_seeds_decode() {
    assert!(Sidecar::decode(&seed("sidecar_decode", "prompt")).unwrap().tokens.len() > 500);
    assert_eq!(Sidecar::decode(&seed("sidecar_decode", "one-token")).unwrap().tokens.len(), 1);
}

#[test]
fn action_seeds_cover_both_outcomes() {
    let ok: Vec<bool> = (0..6).map(|i| Action::parse(std::str::from_utf8(&seed("action_parse", &i.to_string())).unwrap()).is_ok()).collect();
    assert_eq!(ok, [true, true, true, true, false, false]);
}

#[test]
fn manifest_and_frame_seeds_decode() {
    let m = Manifest::parse(std::str::from_utf8(&seed("manifest_parse", "tiny")).unwrap()).unwrap();
    // The frame target decodes against this spec; the seed was rendered from it.
    let mut spec = small_sim(3, 4, 2);
    spec.image = ImageSpec { hfov_deg: 90.0, height: 32, width: 32 };
    assert_eq!(Dataset::in_memory(&spec).unwrap().manifest, m);
    for i in 0..2 {
        let data = seed("frame_decode", &format!("frame{i}"));
        let fl = u32::from_le_bytes(data[1..5].try_into().unwrap()) as usize;
        let dl = u32::from_le_bytes(data[5..9].try_into().unwrap()) as usize;
        let rest = &data[9..];
        decode_frame(&m, data[0] as usize, &rest[..fl], &rest[fl..fl + dl], &rest[fl + dl..]).unwrap();
    }
}

#[test]
fn params_seed_decodes() {
    let data = seed("params_decode", "trained");
    let len = u16::from_le_bytes([data[0], data[1]]) as usize;
    let sc: ParamSidecar = serde_json::from_slice(&data[2..2 + len]).unwrap();
    Mlp::from_parts(&sc, &data[2 + len..]).unwrap();
}

#[test]
fn config_seeds_parse() {
    let text = String::from_utf8(seed("config_parse", "overrides")).unwrap();
    let mut parts = text.split('\0');
    let body = parts.next().unwrap();
    let cfg = Config::with_overrides(body, &parts.map(str::to_string).collect::<Vec<_>>()).unwrap();
    assert_eq!(cfg.sim.seed, 9);
    Config::with_overrides(std::str::from_utf8(&seed("config_parse", "tiny")).unwrap(), &[]).unwrap();
}
