//! Per-class accuracy and IoU of a predicted map against ground truth, matched voxel by
//! voxel.
//!
//! "Accuracy" follows the mapping literature's usage here: `TP / (TP + FP)`, i.e. precision
//! over the voxels predicted as a class.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fusion::SemanticVoxelMap;
use crate::label::{Label, NUM_LABELS};
use crate::num::Real;

/// Rows are ground truth, columns are prediction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_LABELS]; NUM_LABELS],
    /// Predicted voxels with no ground-truth counterpart.
    pub excluded: u64,
    /// Predictions, by predicted class, on ground-truth cells marked `Unknown`. Such cells are
    /// known to be empty (the swept volume of a moving object, say), so any label there is a
    /// false positive.
    pub false_alarms: [u64; NUM_LABELS],
    /// Ground-truth voxels missing from the prediction or predicted `Unknown`, by true class.
    pub missed_unknown: [u64; NUM_LABELS],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_LABELS]; NUM_LABELS]) -> Self {
        ConfusionMatrix {
            counts,
            ..Default::default()
        }
    }

    pub fn matched(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.missed_unknown.iter().sum::<u64>()
    }

    pub fn true_positives(&self, label: Label) -> u64 {
        label.index().map_or(0, |l| self.counts[l][l])
    }

    pub fn false_positives(&self, label: Label) -> u64 {
        label.index().map_or(0, |l| {
            (0..NUM_LABELS).filter(|t| *t != l).map(|t| self.counts[t][l]).sum::<u64>()
                + self.false_alarms[l]
        })
    }

    pub fn false_negatives(&self, label: Label) -> u64 {
        label.index().map_or(0, |l| {
            (0..NUM_LABELS).filter(|p| *p != l).map(|p| self.counts[l][p]).sum::<u64>()
                + self.missed_unknown[l]
        })
    }
}

/// Matches voxels by key. Both maps must share voxel size and frame.
pub fn confusion<T: Real>(pred: &SemanticVoxelMap<T>, truth: &SemanticVoxelMap<T>) -> Result<ConfusionMatrix> {
    if pred.voxel_size() != truth.voxel_size() {
        return Err(Error::Config(format!(
            "voxel size mismatch: prediction {} vs truth {}",
            pred.voxel_size(),
            truth.voxel_size()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (k, t) in truth.iter() {
        let predicted = pred.get(k).and_then(|p| p.final_label.index());
        match (t.final_label.index(), predicted) {
            (Some(ti), Some(pi)) => cm.counts[ti][pi] += 1,
            (Some(ti), None) => cm.missed_unknown[ti] += 1,
            (None, Some(pi)) => cm.false_alarms[pi] += 1,
            (None, None) => {}
        }
    }
    cm.excluded = pred.keys().filter(|k| !truth.contains(k)).count() as u64;
    Ok(cm)
}

/// An exact ratio; `None` from [`Ratio::value`] marks an undefined metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }
}

/// `TP / (TP + FP)`.
pub fn accuracy(cm: &ConfusionMatrix, label: Label) -> Ratio {
    let tp = cm.true_positives(label);
    Ratio {
        numerator: tp,
        denominator: tp + cm.false_positives(label),
    }
}

/// `TP / (TP + FP + FN)`.
pub fn iou(cm: &ConfusionMatrix, label: Label) -> Ratio {
    let tp = cm.true_positives(label);
    Ratio {
        numerator: tp,
        denominator: tp + cm.false_positives(label) + cm.false_negatives(label),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub label: Label,
    pub accuracy: Option<f64>,
    pub iou: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub classes: [ClassMetrics; NUM_LABELS],
    /// Unweighted mean over the classes whose metric is defined.
    pub average_accuracy: Option<f64>,
    pub average_iou: Option<f64>,
    pub matched: u64,
    pub excluded: u64,
    pub missed_unknown: u64,
    pub false_alarms: u64,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let classes = Label::SEMANTIC.map(|label| ClassMetrics {
            label,
            accuracy: accuracy(cm, label).value(),
            iou: iou(cm, label).value(),
            tp: cm.true_positives(label),
            fp: cm.false_positives(label),
            fn_: cm.false_negatives(label),
        });
        MetricsReport {
            average_accuracy: mean(classes.iter().map(|c| c.accuracy)),
            average_iou: mean(classes.iter().map(|c| c.iou)),
            classes,
            matched: cm.matched(),
            excluded: cm.excluded,
            missed_unknown: cm.missed_unknown.iter().sum(),
            false_alarms: cm.false_alarms.iter().sum(),
        }
    }

    pub fn class(&self, label: Label) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Table with one row per class (in percent) plus the averages.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>10} {:>10}", "class", "accuracy", "iou");
        for c in &self.classes {
            let _ = writeln!(out, "{:<12} {:>10} {:>10}", c.label.name(), pct(c.accuracy), pct(c.iou));
        }
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>10}",
            "average",
            pct(self.average_accuracy),
            pct(self.average_iou)
        );
        let _ = writeln!(
            out,
            "voxels: matched {} excluded {} missed {} false alarms {}",
            self.matched, self.excluded, self.missed_unknown, self.false_alarms
        );
        out
    }

    /// `key=value` lines: one per class, one for the averages, one for totals.
    pub fn to_key_values(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "na".to_string(), |x| format!("{x:.6}"));
        let mut out = String::new();
        for c in &self.classes {
            let _ = writeln!(
                out,
                "class={} accuracy={} iou={} tp={} fp={} fn={}",
                c.label.name(),
                num(c.accuracy),
                num(c.iou),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        let _ = writeln!(
            out,
            "class=average accuracy={} iou={}",
            num(self.average_accuracy),
            num(self.average_iou)
        );
        let _ = writeln!(
            out,
            "totals matched={} excluded={} missed_unknown={} false_alarms={}",
            self.matched, self.excluded, self.missed_unknown, self.false_alarms
        );
        out
    }
}

/// Confusion followed by the report.
pub fn evaluate<T: Real>(pred: &SemanticVoxelMap<T>, truth: &SemanticVoxelMap<T>) -> Result<MetricsReport> {
    Ok(MetricsReport::from_confusion(&confusion(pred, truth)?))
}
