#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_core::protocol::FrameDecoder;

// First byte picks a chunk size; the rest is the byte stream. Chunking
// must not change what comes out.
fuzz_target!(|data: &[u8]| {
    let Some((&chunk, stream)) = data.split_first() else {
        return;
    };
    let chunk = chunk as usize + 1;

    let drain = |dec: &mut FrameDecoder, out: &mut Vec<Result<Vec<u8>, String>>| {
        while let Some(body) = dec.next_body() {
            out.push(body.map_err(|e| e.code().to_string()));
        }
    };
    let mut whole = FrameDecoder::new();
    let mut expected = Vec::new();
    whole.push(stream);
    drain(&mut whole, &mut expected);

    let mut pieces = FrameDecoder::new();
    let mut got = Vec::new();
    for part in stream.chunks(chunk) {
        pieces.push(part);
        drain(&mut pieces, &mut got);
    }
    assert_eq!(got, expected);
    assert_eq!(pieces.buffered(), whole.buffered());
});
