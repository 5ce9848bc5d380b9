//! Fuzz the curriculum-file decoder: arbitrary text must decode to a task
//! list or a structured error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mapo_core::policy_env::curriculum_from_json;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = curriculum_from_json(text);
    }
});
