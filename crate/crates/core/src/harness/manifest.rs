//! Run manifests: what was run, with which configuration, and what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::TOOL_VERSION;
use crate::schedule::{hex, NoiseSchedule};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// See [`make_run_id`].
    pub run_id: String,
    pub seed: u64,
    pub config: Value,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_digest: Option<String>,
    /// Paths relative to the manifest's directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

/// SHA-256 of the canonical (sorted-key, compact) JSON rendering.
pub fn config_digest(config: &Value) -> String {
    // serde_json's default map is ordered by key, so this is canonical.
    let text = serde_json::to_string(config).expect("JSON values always serialise");
    hex(&Sha256::digest(text.as_bytes()))
}

/// `<unix seconds>-<first 12 hex digits of the config digest>`.
pub fn make_run_id(config: &Value) -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs}-{}", &config_digest(config)[..12])
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: u64, schedule: Option<&NoiseSchedule>) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
        let config_digest = config_digest(&config);
        Ok(RunManifest {
            command: command.to_string(),
            run_id: make_run_id(&config),
            seed,
            config,
            config_digest,
            schedule_digest: schedule.map(NoiseSchedule::digest),
            artifacts: Vec::new(),
            tool_version: TOOL_VERSION.to_string(),
            extra: BTreeMap::new(),
        })
    }

    pub fn add_artifact(&mut self, name: impl Into<String>) {
        self.artifacts.push(name.into());
    }

    pub fn set_extra(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("plain data serialises");
        self.extra.insert(key.to_string(), v);
    }

    pub fn digest_matches(&self) -> bool {
        config_digest(&self.config) == self.config_digest
    }

    /// Writes `manifest.json` into `dir` after checking every listed artifact
    /// exists there.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let p = dir.join(a);
            if !p.exists() {
                return Err(Error::invalid(format!(
                    "manifest lists missing artifact {}",
                    p.display()
                )));
            }
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    #[test]
    fn digest_rederives_and_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": [1.5, {"y": 2, "x": 3}]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": [1.5, {"x": 3, "y": 2}], "b": 1}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_ne!(config_digest(&a), config_digest(&serde_json::json!({"b": 2})));
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig::new(10);
        let mut m = RunManifest::new("train", &cfg, 3, Some(&cfg.schedule().unwrap())).unwrap();
        assert!(m.run_id.ends_with(&m.config_digest[..12]));
        m.add_artifact("loss.csv");
        assert!(m.write(dir.path()).is_err());
        fs::write(dir.path().join("loss.csv"), "step\n").unwrap();
        m.set_extra("grid", vec![10, 5]);
        m.write(dir.path()).unwrap();
        let back = RunManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert!(back.digest_matches());
        let echoed: TrainConfig = serde_json::from_value(back.config).unwrap();
        assert_eq!(echoed, cfg);
    }
}
