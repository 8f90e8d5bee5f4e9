//! Input: u16 LE sidecar length, sidecar JSON, then the parameter blob.
#![no_main]
use libfuzzer_sys::fuzz_target;

use dynscene::nn::{Mlp, ParamSidecar};

fuzz_target!(|data: &[u8]| {
    let Some((len, rest)) = data.split_first_chunk::<2>() else { return };
    let len = (u16::from_le_bytes(*len) as usize).min(rest.len());
    let (json, blob) = rest.split_at(len);
    let Ok(sidecar) = serde_json::from_slice::<ParamSidecar>(json) else { return };
    if let Ok(mlp) = Mlp::from_parts(&sidecar, blob) {
        let _ = mlp.forward(&vec![0.5; mlp.input_dim()]);
    }
});
