#![no_main]
use libfuzzer_sys::fuzz_target;

use dynscene::sim::dataset::Manifest;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::parse(s) {
        for i in 0..m.frames.len().min(4) {
            let _ = m.geometry_at(i as u64);
        }
    }
});
