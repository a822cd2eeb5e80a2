//! Run manifests: the resolved configuration, tool version, and seeds of
//! one invocation, written as `manifest.json` in the output directory.
//! Deliberately timestamp-free so identical invocations produce identical
//! bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use fewshot::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Fully resolved configuration after flag overrides.
    pub config: Value,
    /// Input artifact paths as given on the command line.
    pub inputs: Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: Value, inputs: Value) -> Self {
        Self {
            version: crate::VERSION.to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs,
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(out_dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
