//! Error taxonomy for the pipeline: every failure is categorized so the CLI
//! can exit with a meaningful class.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("output exists (pass --overwrite to replace): {0}")]
    WouldOverwrite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("core: {0}")]
    Core(#[from] difflab_core::Error),
}

impl LabError {
    /// Stable category name used in CLI error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            LabError::Config(_) => "config",
            LabError::Format(_) => "format",
            LabError::MissingInput(_) => "missing-input",
            LabError::WouldOverwrite(_) => "would-overwrite",
            LabError::Io(_) => "io",
            LabError::Core(_) => "core",
        }
    }
}
