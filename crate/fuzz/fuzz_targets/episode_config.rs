#![no_main]
use fsd_core::harness::EpisodeConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = EpisodeConfig::from_text(text) {
        let written = cfg.to_text();
        let again = EpisodeConfig::from_text(&written).expect("written config parses");
        assert_eq!(again.to_text(), written);
    }
});
