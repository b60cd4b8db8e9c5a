#![no_main]

use libfuzzer_sys::fuzz_target;
use soundmat_core::{FeatureVector, ForestModel};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = ForestModel::from_json(text) else {
        return;
    };
    let dim = model.feature_dim().min(4096);
    for fill in [0.0, -1e9, 1e9] {
        let probs = model.predict_proba(&FeatureVector(vec![fill; dim]));
        if let Ok(p) = probs {
            assert!((p.sum() - 1.0).abs() < 1e-9);
        }
    }
    assert_eq!(ForestModel::from_json(&model.to_json()).unwrap(), model);
});
