use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub components: BTreeMap<String, f64>,
}

/// Names of every loss component a trainer evaluated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRegistry {
    evaluated: BTreeSet<String>,
}

impl LossRegistry {
    pub fn record(&mut self, name: &str) {
        if !self.evaluated.contains(name) {
            self.evaluated.insert(name.to_string());
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.evaluated.contains(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.evaluated.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    pub epoch_seconds: Vec<f64>,
    pub registry: LossRegistry,
}

impl TrainHistory {
    /// Append a record; steps must strictly increase.
    pub fn push(&mut self, record: StepRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.step > last.step, "history steps must increase");
        }
        for name in record.components.keys() {
            self.registry.record(name);
        }
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Values of one component in step order (missing steps skipped).
    pub fn component(&self, name: &str) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.components.get(name).copied()).collect()
    }

    /// Mean of a component over the steps of one epoch.
    pub fn epoch_mean(&self, name: &str, epoch: usize) -> Option<f64> {
        let vals: Vec<f64> =
            self.records.iter().filter(|r| r.epoch == epoch).filter_map(|r| r.components.get(name).copied()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// One JSON record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollapseVerdict {
    pub collapsed: bool,
    /// Step at which the first qualifying run of sub-epsilon losses completed.
    pub first_step: Option<u64>,
}

/// Flags collapse once `loss_d < epsilon` for `window` consecutive steps.
pub fn detect_mode_collapse(history: &TrainHistory, epsilon: f64, window: usize) -> CollapseVerdict {
    let window = window.max(1);
    let mut run = 0;
    for r in &history.records {
        if r.loss_d < epsilon {
            run += 1;
            if run >= window {
                return CollapseVerdict { collapsed: true, first_step: Some(r.step) };
            }
        } else {
            run = 0;
        }
    }
    CollapseVerdict { collapsed: false, first_step: None }
}
