use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BackboneMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// Counts from `(predicted, actual)` pairs.
    pub fn from_decisions(decisions: &[(bool, bool)]) -> Self {
        let mut c = Confusion::default();
        for &(pred, actual) in decisions {
            match (pred, actual) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Zero denominators give 0 for precision, recall and F1.
    pub fn metrics(&self) -> Metrics {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Metrics { accuracy: ratio(self.tp + self.tn, self.total()), precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }

    /// Component-wise arithmetic mean.
    pub fn mean(items: &[Metrics]) -> Metrics {
        if items.is_empty() {
            return Metrics::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: sum(|m| m.accuracy),
            precision: sum(|m| m.precision),
            recall: sum(|m| m.recall),
            f1: sum(|m| m.f1),
        }
    }
}

/// Accuracy, precision, recall and F1 of `(predicted, actual)` pairs.
pub fn compute_metrics(decisions: &[(bool, bool)]) -> Metrics {
    Confusion::from_decisions(decisions).metrics()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub fold: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityScores {
    pub identity: u32,
    pub folds: Vec<FoldScores>,
    /// Mean over this identity's folds.
    pub mean: Metrics,
}

impl IdentityScores {
    pub fn new(identity: u32, folds: Vec<FoldScores>) -> Self {
        let mean = Metrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
        IdentityScores { identity, folds, mean }
    }
}

/// Per-identity, per-fold scores of one evaluation setting and their average
/// over identities across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Image domain the classifiers saw, e.g. `faces` or `translated`.
    pub label: String,
    pub mode: BackboneMode,
    pub k: usize,
    pub threshold: f64,
    pub identities: Vec<IdentityScores>,
    /// Mean of the per-identity means.
    pub average: Metrics,
    pub skipped: Vec<u32>,
}

impl MetricsReport {
    pub fn new(
        label: impl Into<String>,
        mode: BackboneMode,
        k: usize,
        threshold: f64,
        identities: Vec<IdentityScores>,
        skipped: Vec<u32>,
    ) -> Self {
        let average = Metrics::mean(&identities.iter().map(|i| i.mean).collect::<Vec<_>>());
        MetricsReport { label: label.into(), mode, k, threshold, identities, average, skipped }
    }

    pub fn identity_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.identities.iter().map(|i| i.identity).collect();
        ids.sort_unstable();
        ids
    }
}

/// Drop of one averaged metric from faces to translated images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceDrop {
    pub metric: Metric,
    pub faces: f64,
    pub translated: f64,
    /// `faces − translated`.
    pub absolute: f64,
    /// `(faces − translated) / faces`, 0 when `faces` is 0.
    pub relative: f64,
}

pub fn performance_drop(faces: &MetricsReport, translated: &MetricsReport, metric: Metric) -> Result<PerformanceDrop> {
    if faces.identity_ids() != translated.identity_ids() {
        return Err(Error::MismatchedReports);
    }
    let (a, b) = (faces.average.get(metric), translated.average.get(metric));
    let absolute = a - b;
    Ok(PerformanceDrop {
        metric,
        faces: a,
        translated: b,
        absolute,
        relative: if a == 0.0 { 0.0 } else { absolute / a },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decisions(tp: usize, fp: usize, fn_: usize, tn: usize) -> Vec<(bool, bool)> {
        let mut d = vec![(true, true); tp];
        d.extend(vec![(true, false); fp]);
        d.extend(vec![(false, true); fn_]);
        d.extend(vec![(false, false); tn]);
        d
    }

    #[test]
    fn closed_form_counts() {
        let m = compute_metrics(&decisions(3, 1, 2, 94));
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.97);
    }

    #[test]
    fn all_correct_and_no_positive_predictions() {
        let m = compute_metrics(&decisions(5, 0, 0, 7));
        assert_eq!(m, Metrics { accuracy: 1.0, precision: 1.0, recall: 1.0, f1: 1.0 });
        let z = compute_metrics(&decisions(0, 0, 4, 6));
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
    }

    fn report(ids: &[u32], f1: f64) -> MetricsReport {
        let m = Metrics { f1, ..Default::default() };
        let identities = ids
            .iter()
            .map(|&id| {
                IdentityScores::new(id, vec![FoldScores { fold: 0, confusion: Confusion::default(), metrics: m }])
            })
            .collect();
        MetricsReport::new("x", BackboneMode::Trainable, 1, 0.7, identities, vec![])
    }

    #[test]
    fn drops_from_the_reference_table() {
        let same = performance_drop(&report(&[1, 2], 0.5), &report(&[2, 1], 0.5), Metric::F1).unwrap();
        assert_eq!(same.absolute, 0.0);
        let trainable = performance_drop(&report(&[1], 0.8961), &report(&[1], 0.8611), Metric::F1).unwrap();
        assert!((trainable.absolute - 0.035).abs() < 1e-9);
        let frozen = performance_drop(&report(&[1], 0.9143), &report(&[1], 0.7667), Metric::F1).unwrap();
        assert!((frozen.absolute - 0.1476).abs() < 1e-9);
        assert!((frozen.relative - 0.1476 / 0.9143).abs() < 1e-12);
        assert!(matches!(
            performance_drop(&report(&[1], 0.5), &report(&[2], 0.5), Metric::F1),
            Err(Error::MismatchedReports)
        ));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("auc".parse::<Metric>().is_err());
    }
}
