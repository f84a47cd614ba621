//! Machine-readable run report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Stage results, split into deterministic `metrics` (pure functions of
/// config and seed) and wall-clock `timing`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub metrics: BTreeMap<String, Value>,
    pub timing: BTreeMap<String, Value>,
}

impl RunReport {
    pub fn new(cfg: &RunConfig) -> Self {
        RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: serde_json::to_value(cfg).expect("config serializes"),
            metrics: BTreeMap::new(),
            timing: BTreeMap::new(),
        }
    }

    /// The existing report at `path` refreshed with `cfg`, or a new one.
    pub fn open(path: &Path, cfg: &RunConfig) -> Result<Self> {
        let mut report = if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)?
        } else {
            RunReport::new(cfg)
        };
        report.version = env!("CARGO_PKG_VERSION").to_string();
        report.seed = cfg.seed;
        report.config = serde_json::to_value(cfg).expect("config serializes");
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}
