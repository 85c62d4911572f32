//! Helpers shared by integration tests.

#![allow(dead_code)]

use brag_augment::metrics::MetricsReport;

/// Per-class `(precision, recall, f1)` counted straight from label vectors,
/// with zero for every undefined ratio.
pub fn oracle_scores(pred: &[usize], gold: &[usize], k: usize) -> Vec<(f64, f64, f64)> {
    (0..k)
        .map(|c| {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (&p, &g) in pred.iter().zip(gold) {
                match (p == c, g == c) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        })
        .collect()
}

/// Largest absolute difference between `report` and the oracle, over every
/// per-class score and the three macro averages.
pub fn oracle_gap(report: &MetricsReport, pred: &[usize], gold: &[usize], k: usize) -> f64 {
    let oracle = oracle_scores(pred, gold, k);
    let mut gap: f64 = 0.0;
    for (got, want) in report.per_class.iter().zip(&oracle) {
        gap = gap
            .max((got.precision - want.0).abs())
            .max((got.recall - want.1).abs())
            .max((got.f1 - want.2).abs());
    }
    let mean = |f: fn(&(f64, f64, f64)) -> f64| oracle.iter().map(f).sum::<f64>() / k as f64;
    gap = gap
        .max((report.macro_precision - mean(|s| s.0)).abs())
        .max((report.macro_recall - mean(|s| s.1)).abs())
        .max((report.macro_f1 - mean(|s| s.2)).abs());
    if report.per_class.len() != k {
        return f64::INFINITY;
    }
    gap
}

pub fn collapse(labels: &[usize]) -> Vec<usize> {
    labels.iter().map(|&l| usize::from(l != 0)).collect()
}
