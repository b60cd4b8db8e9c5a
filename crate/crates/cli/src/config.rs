//! The JSON configuration file shared by all commands: any subset of
//! `{"features": {..}, "forest": {..}, "layout": {..}, "seed": n}`.

use std::path::Path;

use soundmat_core::audio::CANONICAL_RATE_HZ;
use soundmat_core::hub::HubConfig;

use crate::CliError;

pub fn parse(text: &str) -> Result<HubConfig, CliError> {
    let config: HubConfig = serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
    validate(&config)?;
    Ok(config)
}

pub fn validate(config: &HubConfig) -> Result<(), CliError> {
    config
        .features
        .validate(CANONICAL_RATE_HZ)
        .map_err(|e| CliError::Invalid(format!("config: {e}")))?;
    config
        .layout
        .validate()
        .map_err(|e| CliError::Invalid(format!("config: {e}")))?;
    let f = &config.forest;
    if f.n_trees == 0 || f.max_depth == 0 || f.min_samples_leaf == 0 || f.features_per_split == Some(0) {
        return Err(CliError::Invalid("config: forest parameters must be positive".into()));
    }
    Ok(())
}

/// Loads `path`, or the defaults when no file is given.
pub fn load(path: Option<&Path>) -> Result<HubConfig, CliError> {
    match path {
        None => Ok(HubConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", p.display())))?;
            parse(&text)
        }
    }
}
