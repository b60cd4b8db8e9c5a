#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_core::protocol::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(env) = decode(data) {
        let frame = encode(&env).expect("decoded envelopes re-encode");
        assert_eq!(decode(&frame).expect("re-encoded frame decodes"), env);
    }
});
