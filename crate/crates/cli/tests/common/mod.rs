#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::Value;
use soundmat_core::device::SoundSource;
use soundmat_core::rng::XorShift64Star;
use soundmat_core::wav::write_wav;
use soundmat_core::ActionLabel;

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

/// Resolves `$ref`s to sibling schema files by their last path segment.
struct SchemaDir;

impl jsonschema::Retrieve for SchemaDir {
    fn retrieve(&self, uri: &jsonschema::Uri<String>) -> Result<Value, Box<dyn std::error::Error + Send + Sync>> {
        let name = uri.as_str().rsplit('/').next().unwrap_or_default();
        let text = std::fs::read_to_string(schema_dir().join(name))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn validator(name: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(schema_dir().join(name)).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    jsonschema::options()
        .with_retriever(SchemaDir)
        .build(&schema)
        .unwrap_or_else(|e| panic!("{name} does not compile: {e}"))
}

/// Panics with every violation listed.
pub fn assert_valid(name: &str, instance: &Value) {
    let v = validator(name);
    let errors: Vec<String> = v.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

/// The three test sounds used throughout: a 440 Hz tone, white noise and a
/// 4 Hz click train, each with +/-20 % level jitter.
pub fn three_sources() -> [(ActionLabel, SoundSource); 3] {
    [
        (ActionLabel::GoForward, SoundSource::sine(440.0).with_jitter(0.2)),
        (ActionLabel::Shake, SoundSource::white_noise().with_jitter(0.2)),
        (ActionLabel::LightUp, SoundSource::click_train(4.0).with_jitter(0.2)),
    ]
}

/// Writes `per_class` one-second clips per source under `dir/<action>/`.
pub fn write_corpus(dir: &Path, sources: &[(ActionLabel, SoundSource)], per_class: usize, seed: u64) {
    let mut rng = XorShift64Star::new(seed);
    for (action, source) in sources {
        let class_dir = dir.join(action.name());
        std::fs::create_dir_all(&class_dir).unwrap();
        for i in 0..per_class {
            let clip = source.render(&mut rng).unwrap();
            write_wav(&class_dir.join(format!("clip_{i:03}.wav")), clip.samples(), clip.sample_rate_hz()).unwrap();
        }
    }
}
