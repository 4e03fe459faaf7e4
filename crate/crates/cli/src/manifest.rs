use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::SCHEMA_VERSION;
use crate::output::OutputRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pass,
    /// Completed, but a configured acceptance threshold was exceeded.
    Breach,
    /// Completed without a threshold to compare against.
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub name: String,
    pub status: TaskStatus,
    pub detail: String,
}

impl TaskRecord {
    pub fn new(name: impl Into<String>, status: TaskStatus, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status,
            detail: detail.into(),
        }
    }
}

/// Provenance of one invocation, written as `manifest.json` next to the
/// outputs it indexes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub schema_version: u32,
    pub command: String,
    pub config_path: String,
    /// SHA-256 of the config file bytes.
    pub config_sha256: String,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub exit_code: i32,
    pub tasks: Vec<TaskRecord>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn start(command: &str, config_path: &str, config_sha256: String, seed: u64, jobs: Option<usize>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config_path: config_path.to_string(),
            config_sha256,
            seed,
            jobs,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            exit_code: 0,
            tasks: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, exit_code: i32, outputs: &[OutputRecord]) {
        self.finished_unix_ms = now_ms();
        self.exit_code = exit_code;
        self.outputs = outputs.to_vec();
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}
