//! Ensemble JSON: reading never panics, and accepted reports survive a
//! write/read cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pimatch::io::{ensemble_from_json, ensemble_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(report) = ensemble_from_json(text) else { return };
    let Ok(written) = ensemble_to_json(&report) else { return };
    let back = ensemble_from_json(&written).expect("written report must parse");
    assert_eq!(ensemble_to_json(&back).expect("serialize"), written);
});
