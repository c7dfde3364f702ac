#![no_main]
use fsd_core::conenet::io::{decode_model, encode_model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = decode_model(data) {
        assert_eq!(encode_model(&net), data);
    }
});
