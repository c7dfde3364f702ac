#![no_main]
use fsd_core::harness::read_belief_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = read_belief_csv(text);
    }
});
