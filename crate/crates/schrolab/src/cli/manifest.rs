use serde::{Deserialize, Serialize};
use std::time::{SystemTime, UNIX_EPOCH};

/// Version stamped on every JSON artifact and CSV sidecar.
pub const SCHEMA_VERSION: u32 = 1;

/// Record of one command run. Timestamps live here and nowhere else, so the
/// artifacts themselves stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub exit_code: i32,
    pub artifacts: Vec<String>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}
