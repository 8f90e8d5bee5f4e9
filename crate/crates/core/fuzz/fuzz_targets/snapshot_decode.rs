#![no_main]
use libfuzzer_sys::fuzz_target;

use dynscene::config::Config;
use dynscene::{harness, snapshot};

fuzz_target!(|data: &[u8]| {
    let Ok(dim) = snapshot::peek_dim(data) else { return };
    let cfg = Config::default();
    let (Ok(agg), Ok(disc)) = (harness::build_aggregator(&cfg, dim), harness::build_discriminator(&cfg, dim)) else { return };
    if let Ok(map) = snapshot::decode(data, &cfg.map, agg, disc) {
        // Whatever decodes must re-encode to the same bytes.
        assert_eq!(snapshot::encode(&map), data);
    }
});
