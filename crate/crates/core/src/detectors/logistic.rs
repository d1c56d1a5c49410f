//! Binary logistic regression on standardized features, used as the head of
//! the feature-based detectors.

use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};

const ITERATIONS: usize = 2000;
const LEARNING_RATE: f64 = 0.5;
const L2: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticHead {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss plus `l2/2 |w|^2`, and its gradient `(dw, db)`, on already standardized rows.
pub(crate) fn loss_and_grad(
    rows: &[Vec<f64>],
    labels: &[bool],
    weights: &[f64],
    bias: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let z: f64 = row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias;
        // log(1 + e^z) - y z, computed stably
        let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
        loss += softplus - if y { z } else { 0.0 };
        let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
        gw.iter_mut().zip(row).for_each(|(g, a)| *g += r * a);
        gb += r;
    }
    loss /= n;
    gw.iter_mut().zip(weights).for_each(|(g, w)| *g = *g / n + l2 * w);
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, gw, gb / n)
}

impl LogisticHead {
    /// Full-batch gradient descent; `labels[i]` is true for the adversarial class.
    pub fn fit(features: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(MeadError::config("logistic head needs one label per feature row"));
        }
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            return Err(MeadError::config("logistic head needs both classes"));
        }
        let d = features[0].len();
        let n = features.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = features.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 && var.is_finite() {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let rows: Vec<Vec<f64>> =
            features.iter().map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect()).collect();
        let mut weights = vec![0.0; d];
        let mut bias = 0.0;
        for _ in 0..ITERATIONS {
            let (_, gw, gb) = loss_and_grad(&rows, labels, &weights, bias, L2);
            weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= LEARNING_RATE * g);
            bias -= LEARNING_RATE * gb;
        }
        Ok(LogisticHead { mean, scale, weights, bias })
    }

    /// Probability of the adversarial class.
    pub fn predict(&self, feature: &[f64]) -> f64 {
        let z: f64 = feature
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| (v - m) / s * w)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{auroc, roc_points, SampleVerdict};

    fn auc_of(head: &LogisticHead, nat: &[Vec<f64>], adv: &[Vec<f64>]) -> f64 {
        let verdicts: Vec<SampleVerdict> =
            nat.iter().zip(adv).map(|(n, a)| SampleVerdict::new(head.predict(n), vec![(0, head.predict(a))])).collect();
        auroc(&roc_points(&verdicts).unwrap())
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rows = vec![vec![0.3, -1.2], vec![1.5, 0.4], vec![-0.7, 0.9], vec![0.1, 0.1]];
        let labels = [true, false, true, false];
        let w = [0.4, -0.8];
        let b = 0.2;
        let (_, gw, gb) = loss_and_grad(&rows, &labels, &w, b, 0.1);
        let h = 1e-6;
        for j in 0..2 {
            let mut wp = w;
            let mut wm = w;
            wp[j] += h;
            wm[j] -= h;
            let fd = (loss_and_grad(&rows, &labels, &wp, b, 0.1).0 - loss_and_grad(&rows, &labels, &wm, b, 0.1).0)
                / (2.0 * h);
            assert!((fd - gw[j]).abs() < 1e-7, "{fd} vs {}", gw[j]);
        }
        let fd = (loss_and_grad(&rows, &labels, &w, b + h, 0.1).0 - loss_and_grad(&rows, &labels, &w, b - h, 0.1).0)
            / (2.0 * h);
        assert!((fd - gb).abs() < 1e-7);
    }

    #[test]
    fn identical_features_are_uninformative() {
        let nat = vec![vec![1.0, 2.0]; 20];
        let adv = nat.clone();
        let feats: Vec<Vec<f64>> = nat.iter().chain(&adv).cloned().collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let head = LogisticHead::fit(&feats, &labels).unwrap();
        assert!((auc_of(&head, &nat, &adv) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shifted_features_separate() {
        let nat: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.01, 1.0]).collect();
        let adv: Vec<Vec<f64>> = (0..20).map(|i| vec![5.0 + i as f64 * 0.01, 1.0]).collect();
        let feats: Vec<Vec<f64>> = nat.iter().chain(&adv).cloned().collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let head = LogisticHead::fit(&feats, &labels).unwrap();
        assert_eq!(auc_of(&head, &nat, &adv), 1.0);
        assert!(head.predict(&[5.1, 1.0]) > 0.9);
    }
}
