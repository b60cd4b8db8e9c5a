#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_core::wav::decode_wav;

fuzz_target!(|data: &[u8]| {
    if let Ok(pcm) = decode_wav(data) {
        let clip = pcm.to_clip().expect("decoded wav has a positive rate");
        assert!(clip.samples().iter().all(|s| s.is_finite() && s.abs() <= 1.0));
    }
});
