//! Stage-cost files: parsing never panics, and accepted costs survive a
//! write/read cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pimatch::matching::StageCost;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cost) = StageCost::from_toml_str(text) else { return };
    let written = cost.to_toml_string().expect("validated cost must serialize");
    let back = StageCost::from_toml_str(&written).expect("written cost must parse");
    assert_eq!(back.to_toml_string().expect("serialize"), written);
});
