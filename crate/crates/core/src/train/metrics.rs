use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of the class.
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` for an average over runs.
    pub run: Option<usize>,
    pub classes: usize,
    pub total: u64,
    /// Correct over total.
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// F-measure with weight `beta` between precision and recall; 0 when both
/// are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(predictions: &[usize], golds: &[usize], classes: usize) -> Result<MetricsReport> {
    if predictions.len() != golds.len() {
        bail!(Contract, "{} predictions for {} gold labels", predictions.len(), golds.len());
    }
    if classes == 0 {
        bail!(Contract, "class count must be positive");
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &g) in predictions.iter().zip(golds) {
        if p >= classes || g >= classes {
            bail!(Contract, "label pair ({g}, {p}) out of range for {classes} classes");
        }
        confusion[g][p] += 1;
    }
    let total = golds.len() as u64;
    let correct: u64 = (0..classes).map(|k| confusion[k][k]).sum();
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|k| {
            let predicted: u64 = (0..classes).map(|g| confusion[g][k]).sum();
            let support: u64 = confusion[k].iter().sum();
            let precision = ratio(confusion[k][k], predicted);
            let recall = ratio(confusion[k][k], support);
            ClassMetrics {
                precision,
                recall,
                f1: f_beta(precision, recall, 1.0),
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / classes as f64;
    Ok(MetricsReport {
        run: None,
        classes,
        total,
        accuracy: ratio(correct, total),
        macro_f1,
        per_class,
        confusion,
    })
}

/// Field-by-field mean of the scalar metrics; confusion matrices and totals
/// are summed.
pub fn multi_run_average(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let Some(first) = reports.first() else {
        bail!(Contract, "no reports to average");
    };
    let k = first.classes;
    if let Some(bad) = reports.iter().find(|r| r.classes != k) {
        bail!(Contract, "cannot average reports over {k} and {} classes", bad.classes);
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let per_class = (0..k)
        .map(|c| ClassMetrics {
            precision: mean(&|r| r.per_class[c].precision),
            recall: mean(&|r| r.per_class[c].recall),
            f1: mean(&|r| r.per_class[c].f1),
            support: reports.iter().map(|r| r.per_class[c].support).sum(),
        })
        .collect();
    let mut confusion = vec![vec![0u64; k]; k];
    for r in reports {
        for g in 0..k {
            for p in 0..k {
                confusion[g][p] += r.confusion[g][p];
            }
        }
    }
    Ok(MetricsReport {
        run: if reports.len() == 1 { first.run } else { None },
        classes: k,
        total: reports.iter().map(|r| r.total).sum(),
        accuracy: mean(&|r| r.accuracy),
        macro_f1: mean(&|r| r.macro_f1),
        per_class,
        confusion,
    })
}
