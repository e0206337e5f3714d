//! `runs/<id>/manifest.json`: what ran, with which config and seeds, and
//! where its outputs live.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Failed,
    /// Completed, then invalidated by re-running it or a stage it depends on.
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub started_at: String,
    pub finished_at: String,
    pub seconds: f64,
    /// Paths relative to the run directory.
    pub checkpoints: Vec<String>,
    pub reports: Vec<String>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub config: Value,
    pub config_hash: String,
    pub seed: u64,
    /// Seed handed to each stage, derived from `seed`.
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub created_at: String,
    pub source_revision: String,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Crate version plus the git commit of the source tree when available.
pub fn source_revision() -> String {
    let git = std::process::Command::new("git")
        .args(["-C", env!("CARGO_MANIFEST_DIR"), "rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    format!("{} {} (git {})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), git.as_deref().unwrap_or("unknown"))
}

impl ExperimentManifest {
    pub fn new(config: &ExperimentConfig, seeds: BTreeMap<String, u64>) -> Self {
        ExperimentManifest {
            experiment_id: config.experiment_id.clone(),
            config: serde_json::to_value(config).expect("config serializes"),
            config_hash: config.hash(),
            seed: config.seed,
            seeds,
            stages: Vec::new(),
            created_at: now(),
            source_revision: source_revision(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(run_dir.join(MANIFEST))?;
        let m: ExperimentManifest = serde_json::from_str(&text)?;
        let config: ExperimentConfig = serde_json::from_value(m.config.clone())?;
        if config.hash() != m.config_hash {
            return Err(CliError::Usage(format!(
                "{}: config hash does not match the stored config",
                run_dir.display()
            )));
        }
        Ok(m)
    }

    pub fn config(&self) -> ExperimentConfig {
        serde_json::from_value(self.config.clone()).expect("validated on load")
    }

    pub fn completed(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s.name == stage && s.status == StageStatus::Completed)
    }

    /// Write atomically after checking that every referenced path exists.
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        for stage in &self.stages {
            for p in stage.checkpoints.iter().chain(&stage.reports) {
                if !run_dir.join(p).exists() {
                    return Err(CliError::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("stage `{}` lists missing path {p}", stage.name),
                    )));
                }
            }
        }
        let tmp: PathBuf = run_dir.join(format!("{MANIFEST}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(tmp, run_dir.join(MANIFEST))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_refuses_dangling_paths_and_load_checks_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = ExperimentManifest::new(&ExperimentConfig::default(), BTreeMap::new());
        m.stages.push(StageRecord {
            name: "x".into(),
            status: StageStatus::Completed,
            started_at: now(),
            finished_at: now(),
            seconds: 0.0,
            checkpoints: vec![],
            reports: vec!["missing.json".into()],
            message: None,
        });
        assert!(m.save(dir.path()).is_err());
        std::fs::write(dir.path().join("missing.json"), "{}").unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(ExperimentManifest::load(dir.path()).unwrap(), m);
        m.config_hash = "0".into();
        std::fs::write(dir.path().join(MANIFEST), serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(ExperimentManifest::load(dir.path()).is_err());
    }
}
