//! Library side of the `soundmat` command, so the commands can be driven
//! from tests without spawning processes.

pub mod config;
pub mod scenario;
pub mod train_eval;

/// Failures, grouped by exit code: 2 for bad input, 1 for everything that
/// goes wrong while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("need at least 2 classes with training clips, found {found}")]
    InsufficientClasses { found: usize },
    #[error("invalid scenario script: {0}")]
    ScriptInvalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::InsufficientClasses { .. } | CliError::ScriptInvalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Writes pretty JSON followed by a newline.
pub fn write_json(path: &std::path::Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
