//! C-SVM with an RBF kernel, trained by SMO with second-order working-set selection.

use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};

/// Pairs with non-positive curvature are treated as having this curvature.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSettings {
    /// Kernel width; defaults to `1 / (d * var)` over all training values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Iteration cap in units of the training-set size.
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    /// KKT violation tolerance.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_c() -> f64 {
    1.0
}
fn default_max_passes() -> usize {
    10_000
}
fn default_tolerance() -> f64 {
    1e-3
}

impl Default for SvmSettings {
    fn default() -> Self {
        SvmSettings { gamma: None, c: default_c(), max_passes: default_max_passes(), tolerance: default_tolerance() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfSvm {
    pub gamma: f64,
    /// Training points with non-zero dual coefficient.
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// False when the iteration cap was hit before the KKT tolerance was met.
    pub converged: bool,
    pub iterations: usize,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// `1 / (d * var)` with `var` the variance of every training coordinate; 1 if that variance is 0.
pub fn default_gamma(points: &[&[f64]]) -> f64 {
    let d = points.first().map_or(1, |p| p.len()).max(1);
    let values: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (d as f64 * var)
    } else {
        1.0
    }
}

impl RbfSvm {
    /// Negatives are naturals (`y = -1`), positives adversarials (`y = +1`).
    pub fn fit(naturals: &[Vec<f64>], adversarials: &[Vec<f64>], settings: &SvmSettings) -> Result<Self> {
        if naturals.is_empty() || adversarials.is_empty() {
            return Err(MeadError::config("svm needs at least one natural and one adversarial sample"));
        }
        if settings.c.is_nan() || settings.c <= 0.0 {
            return Err(MeadError::config("svm regularization c must be positive"));
        }
        let x: Vec<&[f64]> = naturals.iter().chain(adversarials).map(Vec::as_slice).collect();
        let y: Vec<f64> = naturals.iter().map(|_| -1.0).chain(adversarials.iter().map(|_| 1.0)).collect();
        let n = x.len();
        let gamma = settings.gamma.unwrap_or_else(|| default_gamma(&x));
        let c = settings.c;
        let kernel: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| rbf(gamma, x[i], x[j])).collect()).collect();
        let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];

        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let max_iter = settings.max_passes.saturating_mul(n).max(1);
        let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
        let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter {
            let mut g_max = f64::NEG_INFINITY;
            let mut i_sel = None;
            for t in 0..n {
                if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= g_max {
                    g_max = -y[t] * grad[t];
                    i_sel = Some(t);
                }
            }
            let mut g_min = f64::INFINITY;
            let mut j_sel = None;
            let mut best = f64::INFINITY;
            if let Some(i) = i_sel {
                for t in 0..n {
                    if !in_low(alpha[t], y[t]) {
                        continue;
                    }
                    let v = -y[t] * grad[t];
                    g_min = g_min.min(v);
                    let b = g_max - v;
                    if b > 0.0 {
                        let a = kernel[i][i] + kernel[t][t] - 2.0 * kernel[i][t];
                        let a = if a > 0.0 { a } else { TAU };
                        if -(b * b) / a <= best {
                            best = -(b * b) / a;
                            j_sel = Some(t);
                        }
                    }
                }
            }
            let (Some(i), Some(j)) = (i_sel, j_sel) else {
                converged = true;
                break;
            };
            if g_max - g_min < settings.tolerance {
                converged = true;
                break;
            }
            iterations += 1;
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if y[i] != y[j] {
                let quad = kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j];
                let delta = (-grad[i] - grad[j]) / if quad > 0.0 { quad } else { TAU };
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j];
                let delta = (grad[i] - grad[j]) / if quad > 0.0 { quad } else { TAU };
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for (t, g) in grad.iter_mut().enumerate() {
                *g += q(t, i) * di + q(t, j) * dj;
            }
        }
        if !converged {
            log::warn!("svm stopped after {iterations} iterations without meeting tolerance {}", settings.tolerance);
        }

        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut free_sum) = (0usize, 0.0);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] >= c {
                if y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
        let (support, coef) = (0..n).filter(|&t| alpha[t] > 0.0).map(|t| (x[t].to_vec(), alpha[t] * y[t])).unzip();
        Ok(RbfSvm { gamma, support, coef, rho, converged, iterations })
    }

    /// Signed decision value; positive means adversarial.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(s, c)| c * rbf(self.gamma, s, x)).sum::<f64>() - self.rho
    }

    pub fn predict_adversarial(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nat = (0..10).map(|i| vec![-3.0 + 0.1 * i as f64, -3.0 + 0.05 * i as f64]).collect();
        let adv = (0..10).map(|i| vec![3.0 - 0.1 * i as f64, 3.0 + 0.03 * i as f64]).collect();
        (nat, adv)
    }

    #[test]
    fn far_clusters_are_separated() {
        let (nat, adv) = clusters();
        let svm = RbfSvm::fit(&nat, &adv, &SvmSettings::default()).unwrap();
        assert!(svm.converged);
        assert!(nat.iter().all(|x| !svm.predict_adversarial(x)));
        assert!(adv.iter().all(|x| svm.predict_adversarial(x)));
        // sign flips across the two clusters, and the midpoint sits near the boundary
        assert!(svm.decision(&[-3.0, -3.0]) < 0.0 && svm.decision(&[3.0, 3.0]) > 0.0);
        assert!(svm.decision(&[0.0, 0.07]).abs() < 0.5);
    }

    #[test]
    fn dual_solution_satisfies_kkt() {
        // overlapping 1-d classes force bounded and free multipliers
        let nat: Vec<Vec<f64>> = [0.0, 0.3, 0.5, 0.9, 1.4].iter().map(|&v| vec![v]).collect();
        let adv: Vec<Vec<f64>> = [0.8, 1.0, 1.2, 1.6, 0.4].iter().map(|&v| vec![v]).collect();
        let settings = SvmSettings { gamma: Some(2.0), c: 1.0, max_passes: 10_000, tolerance: 1e-8 };
        let svm = RbfSvm::fit(&nat, &adv, &settings).unwrap();
        assert!(svm.converged);
        assert!(svm.coef.iter().sum::<f64>().abs() < 1e-9);
        let points: Vec<(Vec<f64>, f64)> =
            nat.iter().map(|x| (x.clone(), -1.0)).chain(adv.iter().map(|x| (x.clone(), 1.0))).collect();
        for (x, y) in &points {
            let alpha = svm.support.iter().zip(&svm.coef).find(|(s, _)| *s == x).map_or(0.0, |(_, c)| c * y);
            let margin = y * svm.decision(x);
            if alpha <= 0.0 {
                assert!(margin >= 1.0 - 1e-6, "{x:?} {margin}");
            } else if alpha >= 1.0 {
                assert!(margin <= 1.0 + 1e-6);
            } else {
                assert!((margin - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn iteration_cap_is_reported() {
        let (nat, adv) = clusters();
        let settings = SvmSettings { max_passes: 0, ..SvmSettings::default() };
        let svm = RbfSvm::fit(&nat, &adv, &settings).unwrap();
        assert!(!svm.converged);
        assert_eq!(svm.iterations, 1);
    }

    #[test]
    fn default_gamma_uses_pooled_variance() {
        let pts: Vec<&[f64]> = vec![&[0.0, 2.0], &[2.0, 0.0]];
        assert!((default_gamma(&pts) - 0.5).abs() < 1e-15);
    }
}
