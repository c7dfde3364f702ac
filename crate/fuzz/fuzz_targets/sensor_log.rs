#![no_main]
use fsd_core::sensors::{parse_log, write_log};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = parse_log(text) {
        let written = write_log(&log);
        let again = parse_log(&written).expect("written log parses");
        assert_eq!(write_log(&again), written);
    }
});
