#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_core::audio::{decode_pcm_b64, encode_pcm_b64};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(samples) = decode_pcm_b64(text) {
        assert!(samples.iter().all(|s| (-1.0..1.0).contains(s)));
        assert_eq!(decode_pcm_b64(&encode_pcm_b64(&samples)).unwrap(), samples);
    }
});
