//! Fuzz the experiment-config parser: arbitrary text must resolve to a
//! config or a structured error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mapo_core::config::{parse_config, ConfigOverrides};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_config(text, "fuzz.toml", &ConfigOverrides::default());
    }
});
