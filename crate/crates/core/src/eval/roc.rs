//! ROC sweep, AUROC and FPR at 95% TPR over worst-case scores.

use super::SampleVerdict;
use crate::error::{MeadError, Result};

/// One operating point; counts are kept so thresholds can be compared exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Number of entries of ascending `sorted` that are `>= gamma`.
fn count_at_least(sorted: &[f64], gamma: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < gamma)
}

/// Sweeps the threshold over every observed score plus both infinite sentinels.
///
/// Positives are the worst-case scores of samples with at least one successful
/// arm; negatives are the natural scores of every sample.
pub fn roc_points(verdicts: &[SampleVerdict]) -> Result<Vec<RocPoint>> {
    let mut negatives: Vec<f64> = verdicts.iter().map(|v| v.natural_score).collect();
    let mut positives: Vec<f64> = verdicts.iter().filter_map(SampleVerdict::worst_case).collect();
    if negatives.is_empty() {
        return Err(MeadError::Evaluation("no natural samples".into()));
    }
    if positives.is_empty() {
        return Err(MeadError::Evaluation("no successful adversarial examples in this group".into()));
    }
    if negatives.iter().chain(&positives).any(|s| s.is_nan()) {
        return Err(MeadError::Evaluation("detector produced a NaN score".into()));
    }
    negatives.sort_by(f64::total_cmp);
    positives.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = negatives.iter().chain(&positives).copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds.push(f64::NEG_INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let (p, n) = (positives.len(), negatives.len());
    let mut points: Vec<RocPoint> = Vec::with_capacity(thresholds.len());
    for gamma in thresholds {
        // +inf sentinel detects nothing, even a +inf score
        let (tp, fp) = if gamma == f64::INFINITY {
            (0, 0)
        } else {
            (count_at_least(&positives, gamma), count_at_least(&negatives, gamma))
        };
        let point = RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            true_positives: tp,
            false_positives: fp,
            positives: p,
            negatives: n,
        };
        if points.last().is_none_or(|last| (last.true_positives, last.false_positives) != (tp, fp)) {
            points.push(point);
        }
    }
    Ok(points)
}

/// Trapezoidal area under FPR-sorted points.
pub fn auroc(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0).sum::<f64>().clamp(0.0, 1.0)
}

/// FPR at the largest threshold reaching TPR >= 95%, without interpolation.
pub fn fpr_at_95_tpr(points: &[RocPoint]) -> f64 {
    points.iter().filter(|pt| 20 * pt.true_positives >= 19 * pt.positives).map(|pt| pt.fpr).fold(1.0, f64::min)
}
