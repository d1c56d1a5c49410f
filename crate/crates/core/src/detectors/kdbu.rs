//! Kernel density on the last hidden layer plus dropout uncertainty, combined by a logistic head.

use serde::{Deserialize, Serialize};

use super::logistic::LogisticHead;
use crate::error::{MeadError, Result};
use crate::nn::ModelParams;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdBuSettings {
    /// Gaussian kernel bandwidth; Scott's rule on natural features when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Dropout rate used only for the stochastic passes.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_passes")]
    pub dropout_passes: usize,
}

fn default_dropout() -> f64 {
    0.5
}
fn default_passes() -> usize {
    20
}

impl Default for KdBuSettings {
    fn default() -> Self {
        KdBuSettings { bandwidth: None, dropout: default_dropout(), dropout_passes: default_passes() }
    }
}

/// Isotropic Gaussian KDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub points: Vec<Vec<f64>>,
    pub bandwidth: f64,
}

impl Kde {
    /// `ln( (1/n) sum_i N(x; p_i, h^2 I) )`, evaluated with log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let d = x.len() as f64;
        let log_norm = -0.5 * d * (2.0 * std::f64::consts::PI * h2).ln();
        let exps: Vec<f64> = self
            .points
            .iter()
            .map(|p| -p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * h2))
            .collect();
        let max = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exps.iter().map(|e| (e - max).exp()).sum();
        log_norm + max + sum.ln() - (self.points.len() as f64).ln()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

/// `n^(-1/(d+4))` times the mean per-coordinate standard deviation; 1 for degenerate data.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let d = points.first().map_or(1, Vec::len);
    if points.len() < 2 || d == 0 {
        return 1.0;
    }
    let sigma = (0..d)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
            (points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .sum::<f64>()
        / d as f64;
    let h = sigma * n.powf(-1.0 / (d as f64 + 4.0));
    if h > 0.0 && h.is_finite() {
        h
    } else {
        1.0
    }
}

/// Sum over classes of the variance of the softmax output across `passes`
/// seeded dropout passes. Exactly 0 when the model has no dropout.
pub fn dropout_uncertainty(model: &ModelParams, x: &[f64], passes: usize, seed: u64) -> Result<f64> {
    if !model.has_dropout() || passes < 2 {
        model.forward(x)?;
        return Ok(0.0);
    }
    let runs = (0..passes)
        .map(|t| Ok(model.forward_stochastic(x, derive_seed(seed, &[t as u64]))?.probs))
        .collect::<Result<Vec<_>>>()?;
    let c = runs[0].len();
    let n = passes as f64;
    let mut total = 0.0;
    for j in 0..c {
        let mean = runs.iter().map(|r| r[j]).sum::<f64>() / n;
        total += runs.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdBuDetector {
    /// Per-class KDE; `None` for classes absent from the fit naturals.
    pub class_kdes: Vec<Option<Kde>>,
    pub global_kde: Kde,
    pub dropout: f64,
    pub dropout_passes: usize,
    pub seed: u64,
    pub head: LogisticHead,
}

fn last_hidden(model: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, usize)> {
    let f = model.features(x)?;
    let label = crate::nn::argmax(&f.probs);
    let feat = f.last_hidden().map_or_else(|| f.logits.clone(), <[f64]>::to_vec);
    Ok((feat, label))
}

impl KdBuDetector {
    /// `(-log density under the predicted class's KDE, uncertainty)`.
    pub fn features(&self, model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
        let (feat, label) = last_hidden(model, x)?;
        let kde = self.class_kdes.get(label).and_then(Option::as_ref).unwrap_or(&self.global_kde);
        let mut mc = model.clone();
        mc.set_dropout(self.dropout)?;
        let u = dropout_uncertainty(&mc, x, self.dropout_passes, self.seed)?;
        Ok(vec![-kde.log_density(&feat), u])
    }

    pub fn fit(
        model: &ModelParams,
        naturals: &[Vec<f64>],
        labels: &[usize],
        adversarials: &[Vec<f64>],
        settings: &KdBuSettings,
        seed: u64,
    ) -> Result<Self> {
        if naturals.is_empty() || adversarials.is_empty() || naturals.len() != labels.len() {
            return Err(MeadError::config("kd-bu needs labelled naturals and at least one adversarial"));
        }
        let feats: Vec<Vec<f64>> = naturals.iter().map(|x| Ok(last_hidden(model, x)?.0)).collect::<Result<_>>()?;
        let bandwidth = settings.bandwidth.unwrap_or_else(|| scott_bandwidth(&feats));
        if bandwidth.is_nan() || bandwidth <= 0.0 {
            return Err(MeadError::config("kde bandwidth must be positive"));
        }
        let class_kdes = (0..model.output_dim())
            .map(|c| {
                let pts: Vec<Vec<f64>> =
                    feats.iter().zip(labels).filter(|(_, &y)| y == c).map(|(f, _)| f.clone()).collect();
                (!pts.is_empty()).then_some(Kde { points: pts, bandwidth })
            })
            .collect();
        let mut detector = KdBuDetector {
            class_kdes,
            global_kde: Kde { points: feats, bandwidth },
            dropout: settings.dropout,
            dropout_passes: settings.dropout_passes,
            seed,
            head: LogisticHead { mean: Vec::new(), scale: Vec::new(), weights: Vec::new(), bias: 0.0 },
        };
        let mut rows = Vec::new();
        let mut is_adv = Vec::new();
        for (x, flag) in naturals.iter().map(|x| (x, false)).chain(adversarials.iter().map(|x| (x, true))) {
            rows.push(detector.features(model, x)?);
            is_adv.push(flag);
        }
        detector.head = LogisticHead::fit(&rows, &is_adv)?;
        Ok(detector)
    }

    pub fn score(&self, model: &ModelParams, x: &[f64]) -> Result<f64> {
        Ok(self.head.predict(&self.features(model, x)?))
    }
}
