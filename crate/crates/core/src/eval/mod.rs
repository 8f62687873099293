//! Classification metrics, binary contact/ambient collapse, and the
//! window-length ablation harness.
//!
//! Macro averages are unweighted means over classes with nonzero support.
//! A zero denominator in precision or recall yields 0.

mod ablation;

pub use ablation::{
    ablation_csv, ablation_json, load_reference_curve, parse_durations, window_ablation,
    AblationConfig, AblationPoint, AblationSource, LabeledWindow, ReferenceCurve, ReferencePoint,
    SyntheticPatternSource, PATTERN_PERIOD_S,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::class::{ContactClass, N_CLASSES};
use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Reorder classes: new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_classes();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.counts[i][j] = self.counts[perm[i]][perm[j]];
            }
        }
        out
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    confusion_n(preds, labels, N_CLASSES)
}

pub fn confusion_n(preds: &[usize], labels: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(n);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= n {
            return Err(Error::LabelOutOfRange(p));
        }
        if t >= n {
            return Err(Error::LabelOutOfRange(t));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let n = cm.n_classes();
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix has no samples"));
    }
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.counts[c][c];
            let col: u64 = (0..n).map(|r| cm.counts[r][c]).sum();
            let row: u64 = cm.counts[c].iter().sum();
            let precision = ratio(tp, col);
            let recall = ratio(tp, row);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: row,
            }
        })
        .collect();
    let supported: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let k = supported.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| supported.iter().map(|m| f(m)).sum::<f64>() / k;
    Ok(MetricReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: ratio(cm.trace(), total),
        per_class,
    })
}

/// Binary class index of a 4-class label: 0 = ambient, 1 = contact.
pub fn binary_index(class: usize) -> usize {
    usize::from(class != ContactClass::Ambient.index())
}

/// Merge leaf, twig and trunk into one contact class. Output order is
/// (ambient, contact).
pub fn binary_collapse(cm: &ConfusionMatrix) -> ConfusionMatrix {
    let mut out = ConfusionMatrix::zeros(2);
    for (t, row) in cm.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            out.counts[binary_index(t)][binary_index(p)] += c;
        }
    }
    out
}

impl MetricReport {
    /// Aligned-column text rendering.
    pub fn to_text(&self, class_names: &[&str]) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for (name, m) in class_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                s,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                name, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            s,
            "{:<10} {:>9.4} {:>9.4} {:>9.4}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1
        );
        let _ = writeln!(s, "{:<10} {:>9.4}", "accuracy", self.accuracy);
        s
    }
}
