//! Run manifests: everything needed to repeat a run and audit its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataio::IngestionReport;
use crate::error::{Error, Result};
use crate::experiments::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// Some items failed; outputs cover the rest.
    Partial,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration, overrides applied.
    pub config: RunConfig,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_secs: u64,
    pub wall_time_secs: f64,
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<Failure>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingestion: Option<IngestionReport>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
