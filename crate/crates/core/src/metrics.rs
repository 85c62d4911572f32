//! Confusion-matrix based precision, recall and F1 with macro averaging.
//!
//! Undefined ratios (a class never predicted, or never present) count as
//! zero and still take part in the macro mean.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Label, LabelMode};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Scores are fractions in `[0, 1]`; [`MetricsReport::table`] shows them as
/// percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: LabelMode,
    /// Rows are gold classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_names(num_classes: usize, mode: LabelMode) -> Vec<String> {
    match (mode, num_classes) {
        (LabelMode::Binary, 2) | (LabelMode::Multiclass, Label::COUNT) => {
            mode.class_names().into_iter().map(String::from).collect()
        }
        _ => (0..num_classes).map(|k| format!("class_{k}")).collect(),
    }
}

pub fn confusion_matrix(predictions: &[usize], gold: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(gold) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Contract(format!(
                "label pair ({t}, {p}) out of range for {num_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Merges every bragging type into one positive class: class 0 stays, all
/// other classes become class 1.
pub fn collapse_confusion(confusion: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let mut out = vec![vec![0u64; 2]; 2];
    for (t, row) in confusion.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            out[usize::from(t > 0)][usize::from(p > 0)] += count;
        }
    }
    out
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>, mode: LabelMode) -> Self {
        let k = confusion.len();
        let names = class_names(k, mode);
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                let support: u64 = confusion[c].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    label: names[c].clone(),
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if k == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / k as f64
            }
        };
        Self {
            mode,
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            per_class,
            confusion,
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Per-class rows plus the macro average, scores as percentages.
    pub fn table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max("Macro Average".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "Class", "Precision", "Recall", "F1 Score", "Support"
        );
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}",
                c.label,
                100.0 * c.precision,
                100.0 * c.recall,
                100.0 * c.f1,
                c.support
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}",
            "Macro Average",
            100.0 * self.macro_precision,
            100.0 * self.macro_recall,
            100.0 * self.macro_f1,
            self.total()
        );
        out
    }
}

/// Scores predictions against gold labels over `num_classes` classes. In
/// binary mode, inputs with more than two classes are first collapsed to
/// not-bragging (class 0) vs. bragging (everything else).
pub fn evaluate(
    predictions: &[usize],
    gold: &[usize],
    num_classes: usize,
    mode: LabelMode,
) -> Result<MetricsReport> {
    let confusion = confusion_matrix(predictions, gold, num_classes)?;
    let confusion = match mode {
        LabelMode::Binary if num_classes != 2 => collapse_confusion(&confusion),
        _ => confusion,
    };
    Ok(MetricsReport::from_confusion(confusion, mode))
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_predict(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
