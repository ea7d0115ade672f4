//! Run manifests: every CLI invocation records what produced its outputs,
//! so any result file can be regenerated bit-identically (timestamp aside).

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector after the binary name.
    pub args: Vec<String>,
    pub config_paths: Vec<String>,
    pub seed: Option<u64>,
    pub output_paths: Vec<String>,
    pub tool_version: String,
    /// Unix seconds; excluded from reproducibility comparisons.
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config_paths: Vec::new(),
            seed,
            output_paths: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
