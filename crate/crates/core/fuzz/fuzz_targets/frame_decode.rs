//! Input: frame index byte, u32 LE features length, u32 LE depth length, then
//! the feature, depth and mask arrays back to back. Decoded against a fixed
//! 32x32, four-dimensional, two-frame manifest.
#![no_main]
use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;

use dynscene::harness::verify::small_sim;
use dynscene::sim::dataset::{decode_frame, Dataset, ImageSpec, Manifest};

fn manifest() -> &'static Manifest {
    static M: OnceLock<Manifest> = OnceLock::new();
    M.get_or_init(|| {
        let mut spec = small_sim(3, 4, 2);
        spec.image = ImageSpec { hfov_deg: 90.0, height: 32, width: 32 };
        Dataset::in_memory(&spec).expect("fixed manifest").manifest
    })
}

fuzz_target!(|data: &[u8]| {
    let Some((&index, rest)) = data.split_first() else { return };
    let Some((a, rest)) = rest.split_first_chunk::<4>() else { return };
    let Some((b, rest)) = rest.split_first_chunk::<4>() else { return };
    let fl = (u32::from_le_bytes(*a) as usize).min(rest.len());
    let (features, rest) = rest.split_at(fl);
    let dl = (u32::from_le_bytes(*b) as usize).min(rest.len());
    let (depth, masks) = rest.split_at(dl);
    let _ = decode_frame(manifest(), index as usize % 3, features, depth, masks);
});
