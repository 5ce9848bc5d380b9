//! Fuzz the policy snapshot decoder: arbitrary bytes must decode to a
//! policy or a structured error, never a panic or out-of-bounds read.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mapo_core::io::decode_policy;

fuzz_target!(|data: &[u8]| {
    let _ = decode_policy(data);
});
