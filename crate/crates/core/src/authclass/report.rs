use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{performance_drop, Metric, MetricsReport, PerformanceDrop};
use super::BackboneMode;
use crate::error::{Error, Result};

/// Published averages per metric (accuracy, precision, recall, F1) in the
/// column order frozen/faces, frozen/flowers, trainable/faces,
/// trainable/flowers. Full-scale reference only, not a desk-scale target.
pub const REFERENCE_SCORES: [(Metric, [f64; 4]); 4] = [
    (Metric::Accuracy, [0.9998, 0.9976, 0.9992, 0.9974]),
    (Metric::Precision, [0.9139, 0.8353, 0.8810, 0.8594]),
    (Metric::Recall, [0.9148, 0.7086, 0.9117, 0.8627]),
    (Metric::F1, [0.9143, 0.7667, 0.8961, 0.8611]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthTableRow {
    pub metric: Metric,
    pub frozen_faces: f64,
    pub frozen_translated: f64,
    pub trainable_faces: f64,
    pub trainable_translated: f64,
    /// Published values in the same column order.
    pub reference: [f64; 4],
}

/// Metric × {faces, translated} × {frozen, trainable}, plus the drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthTable {
    pub rows: Vec<AuthTableRow>,
    pub frozen_drops: Vec<PerformanceDrop>,
    pub trainable_drops: Vec<PerformanceDrop>,
    pub reports: Vec<MetricsReport>,
}

impl AuthTable {
    pub fn new(
        frozen_faces: MetricsReport,
        frozen_translated: MetricsReport,
        trainable_faces: MetricsReport,
        trainable_translated: MetricsReport,
    ) -> Result<Self> {
        let modes = [
            (&frozen_faces, BackboneMode::Frozen),
            (&frozen_translated, BackboneMode::Frozen),
            (&trainable_faces, BackboneMode::Trainable),
            (&trainable_translated, BackboneMode::Trainable),
        ];
        if modes.iter().any(|(r, m)| r.mode != *m) {
            return Err(Error::InvalidArgument("reports passed in the wrong backbone-mode order".into()));
        }
        let mut frozen_drops = Vec::new();
        let mut trainable_drops = Vec::new();
        let mut rows = Vec::new();
        for (metric, reference) in REFERENCE_SCORES {
            frozen_drops.push(performance_drop(&frozen_faces, &frozen_translated, metric)?);
            trainable_drops.push(performance_drop(&trainable_faces, &trainable_translated, metric)?);
            rows.push(AuthTableRow {
                metric,
                frozen_faces: frozen_faces.average.get(metric),
                frozen_translated: frozen_translated.average.get(metric),
                trainable_faces: trainable_faces.average.get(metric),
                trainable_translated: trainable_translated.average.get(metric),
                reference,
            });
        }
        Ok(AuthTable {
            rows,
            frozen_drops,
            trainable_drops,
            reports: vec![frozen_faces, frozen_translated, trainable_faces, trainable_translated],
        })
    }

    pub fn row(&self, metric: Metric) -> &AuthTableRow {
        self.rows.iter().find(|r| r.metric == metric).expect("every metric has a row")
    }
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    label: &'a str,
    mode: &'a str,
    identity: u32,
    fold: usize,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
}

/// One row per (report, identity, fold).
pub fn write_scores_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for r in reports {
        for id in &r.identities {
            for f in &id.folds {
                w.serialize(ScoreRow {
                    label: &r.label,
                    mode: r.mode.as_str(),
                    identity: id.identity,
                    fold: f.fold,
                    accuracy: f.metrics.accuracy,
                    precision: f.metrics.precision,
                    recall: f.metrics.recall,
                    f1: f.metrics.f1,
                    tp: f.confusion.tp,
                    fp: f.confusion.fp,
                    fn_: f.confusion.fn_,
                    tn: f.confusion.tn,
                })
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
