//! Experiment configs: parsing and resolution never panic, and accepted
//! configs survive a write/read cycle unchanged.

#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use pimatch::config::{Experiment, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ExperimentConfig::from_toml_str(text) else { return };
    if let Ok(written) = cfg.to_toml_string() {
        let back = ExperimentConfig::from_toml_str(&written).expect("written config must parse");
        assert_eq!(back.to_toml_string().ok(), Some(written));
    }
    // Resolution builds the plant model; external files are looked up in a
    // directory that does not exist.
    let _ = Experiment::from_str_in(text, Path::new("/nonexistent-fuzz-dir"));
});
