//! ROC curves, AUC and multi-run summaries.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FPR_GRID: usize = 101;

/// Scores (higher means more likely positive) with their true labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NumericFailure("NaN score".into()));
        }
        Ok(Self { scores, labels })
    }

    fn class_counts(&self) -> (u64, u64) {
        let pos = self.labels.iter().filter(|&&l| l).count() as u64;
        (pos, self.labels.len() as u64 - pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Threshold-sweep ROC curve from (0, 0) to (1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// Cumulative `(false positives, true positives)` per point, kept for
    /// exact area computation.
    counts: Vec<(u64, u64)>,
    negatives: u64,
    positives: u64,
}

impl RocCurve {
    /// Trapezoidal area, evaluated in exact integer arithmetic.
    pub fn area(&self) -> f64 {
        let mut twice: u128 = 0;
        for pair in self.counts.windows(2) {
            let (fp0, tp0) = pair[0];
            let (fp1, tp1) = pair[1];
            twice += u128::from(fp1 - fp0) * u128::from(tp0 + tp1);
        }
        twice as f64 / (2 * self.negatives as u128 * self.positives as u128) as f64
    }

    /// True positive rate at `fpr`, linearly interpolated. On vertical
    /// segments the upper value is used.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let j = self.points.partition_point(|p| p.fpr <= fpr);
        if j == 0 {
            return 0.0;
        }
        let a = self.points[j - 1];
        if a.fpr == fpr || j == self.points.len() {
            return a.tpr;
        }
        let b = self.points[j];
        a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr)
    }
}

pub fn roc_curve(set: &ScoredSet) -> Result<RocCurve> {
    let (positives, negatives) = set.class_counts();
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..set.scores.len()).collect();
    order.sort_by(|&a, &b| {
        set.scores[b]
            .partial_cmp(&set.scores[a])
            .unwrap_or(Ordering::Equal)
    });
    let mut counts = vec![(0u64, 0u64)];
    let (mut fp, mut tp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let score = set.scores[order[i]];
        // one point per distinct score, so ties form a single diagonal step
        while i < order.len() && set.scores[order[i]] == score {
            if set.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        counts.push((fp, tp));
    }
    let points = counts
        .iter()
        .map(|&(f, t)| RocPoint {
            fpr: f as f64 / negatives as f64,
            tpr: t as f64 / positives as f64,
        })
        .collect();
    Ok(RocCurve {
        points,
        counts,
        negatives,
        positives,
    })
}

pub fn auc(set: &ScoredSet) -> Result<f64> {
    Ok(roc_curve(set)?.area())
}

/// Per-run AUCs with their mean, population standard deviation and the
/// mean ROC (with per-point spread) on a uniform FPR grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_run_auc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub fpr_grid: Vec<f64>,
    pub mean_tpr: Vec<f64>,
    pub std_tpr: Vec<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize_runs(runs: &[ScoredSet], fpr_grid_size: usize) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if fpr_grid_size < 2 {
        return Err(Error::ConfigInvalid("FPR grid needs at least 2 points".into()));
    }
    let curves = runs.iter().map(roc_curve).collect::<Result<Vec<_>>>()?;
    let per_run_auc: Vec<f64> = curves.iter().map(RocCurve::area).collect();
    let (mean, std) = mean_std(&per_run_auc);
    let fpr_grid: Vec<f64> = (0..fpr_grid_size)
        .map(|i| i as f64 / (fpr_grid_size - 1) as f64)
        .collect();
    let mut mean_tpr = Vec::with_capacity(fpr_grid_size);
    let mut std_tpr = Vec::with_capacity(fpr_grid_size);
    for &f in &fpr_grid {
        let tprs: Vec<f64> = curves.iter().map(|c| c.tpr_at(f)).collect();
        let (m, s) = mean_std(&tprs);
        mean_tpr.push(m);
        std_tpr.push(s);
    }
    Ok(EvalReport {
        per_run_auc,
        mean,
        std,
        fpr_grid,
        mean_tpr,
        std_tpr,
    })
}

/// `P(pos > neg) + 0.5 P(pos == neg)` over all positive/negative pairs.
pub fn pairwise_auc(set: &ScoredSet) -> Result<f64> {
    let (positives, negatives) = set.class_counts();
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut twice: u128 = 0;
    for (i, &sp) in set.scores.iter().enumerate() {
        if !set.labels[i] {
            continue;
        }
        for (j, &sn) in set.scores.iter().enumerate() {
            if set.labels[j] {
                continue;
            }
            twice += match sp.partial_cmp(&sn) {
                Some(Ordering::Greater) => 2,
                Some(Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice as f64 / (2 * positives as u128 * negatives as u128) as f64)
}
