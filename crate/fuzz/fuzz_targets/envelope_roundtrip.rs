#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_core::protocol::{decode_body, encode_body};

// Any body the decoder accepts re-encodes to a canonical form that is a
// fixed point of decode-then-encode.
fuzz_target!(|data: &[u8]| {
    let Ok(env) = decode_body(data) else {
        return;
    };
    let canonical = encode_body(&env).expect("decoded envelopes re-encode");
    let again = decode_body(&canonical).expect("canonical body decodes");
    assert_eq!(again, env);
    assert_eq!(encode_body(&again).unwrap(), canonical);
});
