#![no_main]
use libfuzzer_sys::fuzz_target;

use dynscene::tokens::Sidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = Sidecar::decode(data) {
        let again = Sidecar::decode(&s.encode().expect("decoded sidecar encodes")).expect("re-decode");
        assert_eq!(again.tokens.len(), s.tokens.len());
    }
});
