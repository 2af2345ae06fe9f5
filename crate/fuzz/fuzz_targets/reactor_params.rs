//! Reactor parameter files: parsing never panics, and accepted input
//! survives a write/read cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pimatch::reactor::ReactorParameters;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(p) = ReactorParameters::from_toml_str(text) else { return };
    let written = p.to_toml_string();
    let back = ReactorParameters::from_toml_str(&written).expect("written parameters must parse");
    assert_eq!(back.to_toml_string(), written);
});
