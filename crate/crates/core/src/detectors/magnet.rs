//! Autoencoder-based detection: reconstruction error and the divergence between
//! predictions on an input and on its reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};
use crate::nn::{softmax, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagNetSettings {
    /// Hidden widths of the autoencoder.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}
fn default_temperature() -> f64 {
    10.0
}
fn default_epochs() -> usize {
    30
}
fn default_lr() -> f64 {
    0.01
}

impl Default for MagNetSettings {
    fn default() -> Self {
        MagNetSettings {
            hidden: default_hidden(),
            temperature: default_temperature(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
        }
    }
}

/// Jensen-Shannon divergence in nats; bounded by `ln 2`.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * (2.0 * x / (x + y)).ln()).sum()
    };
    (0.5 * (kl_to_mid(p, q) + kl_to_mid(q, p))).clamp(0.0, std::f64::consts::LN_2)
}

/// Raw `(reconstruction error, divergence)` for one input.
pub fn magnet_scores(
    autoencoder: &ModelParams,
    model: &ModelParams,
    x: &[f64],
    temperature: f64,
) -> Result<(f64, f64)> {
    let recon = autoencoder.output(x)?;
    let err = x.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let soft = |z: Vec<f64>| softmax(&z.iter().map(|v| v / temperature).collect::<Vec<_>>());
    let p = soft(model.output(x)?);
    let q = soft(model.output(&recon)?);
    Ok((err, jensen_shannon(&p, &q)))
}

/// Fraction of fit scores at or below `value`.
fn ecdf(sorted: &[f64], value: f64) -> f64 {
    sorted.partition_point(|s| *s <= value) as f64 / sorted.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagNetDetector {
    pub autoencoder: ModelParams,
    pub temperature: f64,
    /// Sorted fit-set reconstruction errors.
    pub fit_errors: Vec<f64>,
    /// Sorted fit-set divergences.
    pub fit_divergences: Vec<f64>,
}

impl MagNetDetector {
    pub fn fit(model: &ModelParams, autoencoder: ModelParams, naturals: &[Vec<f64>], temperature: f64) -> Result<Self> {
        if naturals.is_empty() {
            return Err(MeadError::config("magnet needs at least one natural"));
        }
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(MeadError::config("magnet temperature must be positive"));
        }
        if autoencoder.input_dim() != model.input_dim() || autoencoder.output_dim() != model.input_dim() {
            return Err(MeadError::config("autoencoder dimensions do not match the classifier input"));
        }
        let (mut fit_errors, mut fit_divergences): (Vec<f64>, Vec<f64>) = naturals
            .iter()
            .map(|x| magnet_scores(&autoencoder, model, x, temperature))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        fit_errors.sort_unstable_by(f64::total_cmp);
        fit_divergences.sort_unstable_by(f64::total_cmp);
        Ok(MagNetDetector { autoencoder, temperature, fit_errors, fit_divergences })
    }

    /// Maximum of the two rank-normalized scores.
    pub fn score(&self, model: &ModelParams, x: &[f64]) -> Result<f64> {
        let (err, div) = magnet_scores(&self.autoencoder, model, x, self.temperature)?;
        Ok(ecdf(&self.fit_errors, err).max(ecdf(&self.fit_divergences, div)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture, Layer};

    fn identity_ae(d: usize) -> ModelParams {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        ModelParams::new(vec![Layer {
            inputs: d,
            outputs: d,
            weights: w,
            bias: vec![0.0; d],
            activation: Activation::Identity,
            dropout: 0.0,
        }])
        .unwrap()
    }

    #[test]
    fn perfect_autoencoder_scores_zero() {
        let m = Architecture::new(3, vec![4], 2).initialize(1).unwrap();
        let (e, j) = magnet_scores(&identity_ae(3), &m, &[0.2, 0.7, 0.1], 10.0).unwrap();
        assert_eq!((e, j), (0.0, 0.0));
    }

    #[test]
    fn jsd_extremes() {
        assert!((jensen_shannon(&[1.0, 0.0], &[0.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(jensen_shannon(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let v = jensen_shannon(&[0.9, 0.05, 0.05], &[0.1, 0.1, 0.8]);
        assert!(v > 0.0 && v <= std::f64::consts::LN_2);
    }

    #[test]
    fn fit_naturals_mostly_below_top_rank() {
        let m = Architecture::new(3, vec![4], 2).initialize(1).unwrap();
        let ae = Architecture::new(3, vec![2], 3).initialize(5).unwrap();
        let nats: Vec<Vec<f64>> =
            (0..40).map(|i| vec![(i as f64 * 0.13).fract(), (i as f64 * 0.29).fract(), 0.5]).collect();
        let det = MagNetDetector::fit(&m, ae, &nats, 10.0).unwrap();
        let mut scores: Vec<f64> = nats.iter().map(|x| det.score(&m, x).unwrap()).collect();
        scores.sort_unstable_by(f64::total_cmp);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        let p95 = scores[(0.95 * (scores.len() - 1) as f64).round() as usize];
        assert!(scores[0] <= p95);
        assert_eq!(ecdf(&[1.0, 2.0, 3.0, 4.0], 2.0), 0.5);
    }
}
