#![no_main]
use fsd_core::track::ConeLayout;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(layout) = ConeLayout::from_csv(text) {
        let written = layout.to_csv();
        let again = ConeLayout::from_csv(&written).expect("written layout parses");
        assert_eq!(again.to_csv(), written);
    }
});
