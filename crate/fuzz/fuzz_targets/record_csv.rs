//! Trajectory CSV: reading never panics, and valid records survive a
//! write/read cycle unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pimatch::io::{read_record_csv, write_record_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(rec) = read_record_csv(data) else { return };
    let mut first = Vec::new();
    if write_record_csv(&rec, &mut first).is_err() {
        return;
    }
    let back = read_record_csv(first.as_slice()).expect("written record must parse");
    let mut second = Vec::new();
    write_record_csv(&back, &mut second).expect("re-read record must write");
    assert_eq!(first, second);
});
