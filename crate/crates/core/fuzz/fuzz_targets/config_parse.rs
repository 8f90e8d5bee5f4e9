//! Input: TOML text, optionally followed by NUL-separated `key=value` overrides.
#![no_main]
use libfuzzer_sys::fuzz_target;

use dynscene::config::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let mut parts = s.split('\0');
    let text = parts.next().unwrap_or("");
    let overrides: Vec<String> = parts.map(str::to_string).collect();
    let _ = Config::with_overrides(text, &overrides);
});
