#![no_main]
use fsd_core::conenet::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ds) = Dataset::from_csv(text) {
        let written = ds.to_csv();
        let again = Dataset::from_csv(&written).expect("written dataset parses");
        assert_eq!(again.to_csv(), written);
    }
});
