#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_cli::config::parse;
use soundmat_core::hub::Hub;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = parse(text) {
        // anything the loader accepts must be enough to start a hub
        Hub::new(config).expect("validated config builds a hub");
    }
});
