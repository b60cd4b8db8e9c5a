#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_core::mat::{DevicePose, MatLayout};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(layout) = MatLayout::from_json(text) else {
        return;
    };
    assert_eq!(MatLayout::from_json(&layout.to_json()).unwrap(), layout);
    for zone in &layout.zones {
        let (x, y) = zone.rect.center();
        // the centre is in this zone, so lookup finds this zone or an
        // earlier one that shares the point
        let found = layout.zone_at(&DevicePose::new(x, y, 0.0)).expect("centre maps to a zone");
        assert!(found <= zone.action);
        assert!(layout.zone(found).unwrap().rect.contains(x, y));
    }
});
