#![no_main]

use std::sync::Arc;

use libfuzzer_sys::fuzz_target;
use soundmat_core::session::SessionSnapshot;
use soundmat_core::{LogMelExtractor, Session};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(snapshot) = SessionSnapshot::from_json(text) else {
        return;
    };
    let extractor = Arc::new(LogMelExtractor::new(Default::default(), 16_000).unwrap());
    if let Ok(session) = Session::from_snapshot(snapshot, extractor) {
        session.check_invariants().expect("restored sessions are consistent");
        let again = SessionSnapshot::from_json(&session.snapshot().to_json()).unwrap();
        assert_eq!(again, session.snapshot());
    }
});
