use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams, ParamGrads};
use crate::data::LabeledDataset;
use crate::error::{MeadError, Result};
use crate::seed::derive_seed;

/// Minibatch SGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, learning_rate: 0.01, momentum: 0.0, weight_decay: 0.0, batch_size: 1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MeadError::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(MeadError::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(MeadError::config("weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(MeadError::config("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    /// Mean loss of the last epoch (NaN when no epoch ran).
    pub final_loss: f64,
    /// Classifier accuracy on the training set; `None` for autoencoders.
    pub train_accuracy: Option<f64>,
}

fn sgd<F>(params: &mut ModelParams, n: usize, cfg: &TrainConfig, mut per_sample: F) -> Result<f64>
where
    F: FnMut(&ModelParams, usize, &mut ChaCha8Rng, &mut ParamGrads) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut velocity = params.zero_grads();
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zero_grads();
            for &i in batch {
                epoch_loss += per_sample(params, i, &mut rng, &mut grads);
            }
            if !epoch_loss.is_finite() {
                return Err(MeadError::Diverged { epoch, loss: epoch_loss });
            }
            let scale = 1.0 / batch.len() as f64;
            for (l, layer) in params.layers_mut().iter_mut().enumerate() {
                let pairs = [
                    (&mut layer.weights, &grads.weights[l], &mut velocity.weights[l]),
                    (&mut layer.bias, &grads.biases[l], &mut velocity.biases[l]),
                ];
                for (values, g, v) in pairs {
                    for ((w, g), v) in values.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        let step = g * scale + cfg.weight_decay * *w;
                        *v = cfg.momentum * *v + step;
                        *w -= cfg.learning_rate * *v;
                    }
                }
            }
            if params.layers().iter().any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite())) {
                return Err(MeadError::Diverged { epoch, loss: f64::INFINITY });
            }
        }
        last_loss = epoch_loss / n as f64;
        log::debug!("epoch {epoch}: loss {last_loss:.6}");
    }
    Ok(last_loss)
}

/// Trains a softmax classifier with cross-entropy loss.
pub fn train_classifier(data: &LabeledDataset, arch: &Architecture, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if arch.input != data.dim() {
        return Err(MeadError::config(format!(
            "architecture input {} does not match data dimension {}",
            arch.input,
            data.dim()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= arch.output) {
        return Err(MeadError::config(format!("label {bad} exceeds {} output classes", arch.output)));
    }
    let mut params = arch.initialize(derive_seed(cfg.seed, &[0]))?;
    let final_loss = sgd(&mut params, data.len(), cfg, |model, i, rng, grads| {
        let y = data.labels()[i];
        model.loss_gradients(
            data.input(i),
            |logits| {
                let probs = super::softmax(logits);
                // NaN must survive: f64::max would swallow it
                let loss = if probs[y].is_nan() { f64::NAN } else { -probs[y].max(1e-300).ln() };
                let mut d = probs;
                d[y] -= 1.0;
                (loss, d)
            },
            Some(rng),
            grads,
        )
    })?;
    let correct =
        (0..data.len()).filter(|&i| params.predict_label(data.input(i)).ok() == Some(data.labels()[i])).count();
    Ok(TrainReport { params, final_loss, train_accuracy: Some(correct as f64 / data.len() as f64) })
}

/// Mean squared reconstruction error of `model` over `inputs`.
pub(crate) fn reconstruction_mse(model: &ModelParams, inputs: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for x in inputs {
        let out = model.output(x)?;
        total += out.iter().zip(x).map(|(o, v)| (o - v) * (o - v)).sum::<f64>() / x.len() as f64;
    }
    Ok(total / inputs.len() as f64)
}

/// Trains an encoder–decoder (`arch.output == arch.input`) on mean squared reconstruction error.
pub fn train_autoencoder(inputs: &[Vec<f64>], arch: &Architecture, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if arch.output != arch.input {
        return Err(MeadError::config("autoencoder output width must equal its input width"));
    }
    if inputs.is_empty() {
        return Err(MeadError::config("autoencoder needs at least one training input"));
    }
    if let Some(x) = inputs.iter().find(|x| x.len() != arch.input) {
        return Err(MeadError::config(format!(
            "input of dimension {} does not match architecture input {}",
            x.len(),
            arch.input
        )));
    }
    let mut params = arch.initialize(derive_seed(cfg.seed, &[0]))?;
    sgd(&mut params, inputs.len(), cfg, |model, i, rng, grads| {
        let x = &inputs[i];
        model.loss_gradients(
            x,
            |out| {
                let d = x.len() as f64;
                let loss = out.iter().zip(x).map(|(o, v)| (o - v) * (o - v)).sum::<f64>() / d;
                let grad = out.iter().zip(x).map(|(o, v)| 2.0 * (o - v) / d).collect();
                (loss, grad)
            },
            Some(rng),
            grads,
        )
    })?;
    let final_loss = reconstruction_mse(&params, inputs)?;
    Ok(TrainReport { params, final_loss, train_accuracy: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_dataset, GaussianSpec};
    use crate::nn::Activation;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn std_normal_cdf(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26 on erf; plenty for a 0.01-scale oracle.
        let z = x / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.327_591_1 * z.abs());
        let poly =
            t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        let erf = 1.0 - poly * (-z * z).exp();
        0.5 * (1.0 + erf.copysign(z))
    }

    #[test]
    fn gaussian_case_reaches_bayes_level_accuracy() {
        let (train, test) = gen_gaussian_dataset(&GaussianSpec::default()).unwrap();
        let arch = Architecture::new(2, vec![16], 2);
        let cfg = TrainConfig::default();
        let report = train_classifier(&train, &arch, &cfg).unwrap();
        let acc = (0..test.len())
            .filter(|&i| report.params.predict_label(test.input(i)).unwrap() == test.labels()[i])
            .count() as f64
            / test.len() as f64;
        // Means at +-(1,1), sigma 1: the optimal boundary x1 + x2 = 0 sits sqrt(2) away.
        let bayes = std_normal_cdf(2f64.sqrt());
        assert!((bayes - 0.9214).abs() < 1e-3);
        assert!(acc >= 0.90, "test accuracy {acc} (Bayes {bayes})");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (train, _) = gen_gaussian_dataset(&GaussianSpec::default()).unwrap();
        let arch = Architecture::new(2, vec![4], 2);
        let cfg = TrainConfig { epochs: 0, seed: 4, ..TrainConfig::default() };
        let report = train_classifier(&train, &arch, &cfg).unwrap();
        assert_eq!(report.params, arch.initialize(derive_seed(4, &[0])).unwrap());
    }

    #[test]
    fn single_sample_is_memorized() {
        let data = LabeledDataset::new(vec![vec![0.3, -0.2, 0.8]], vec![2], 3).unwrap();
        let arch = Architecture::new(3, vec![8], 3);
        let cfg = TrainConfig { epochs: 50, learning_rate: 0.1, ..TrainConfig::default() };
        let report = train_classifier(&data, &arch, &cfg).unwrap();
        assert_eq!(report.train_accuracy, Some(1.0));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (train, _) = gen_gaussian_dataset(&GaussianSpec::default()).unwrap();
        let mut arch = Architecture::new(2, vec![8], 2);
        arch.dropout = 0.2;
        let cfg = TrainConfig { epochs: 3, batch_size: 8, momentum: 0.9, weight_decay: 1e-4, ..TrainConfig::default() };
        let a = train_classifier(&train, &arch, &cfg).unwrap();
        let b = train_classifier(&train, &arch, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    }

    #[test]
    fn divergence_is_reported() {
        let data = LabeledDataset::new(vec![vec![1e150, -1e150]; 4], vec![0, 1, 0, 1], 2).unwrap();
        let arch = Architecture::new(2, vec![4], 2);
        let cfg = TrainConfig { epochs: 2, learning_rate: 1e10, ..TrainConfig::default() };
        assert!(matches!(train_classifier(&data, &arch, &cfg), Err(MeadError::Diverged { .. })));
    }

    fn gaussian_cloud(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // principal axis (1, 1)/sqrt2 with std 2, minor axis (1, -1)/sqrt2 with std 0.3
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
                let b: f64 = rng.sample::<f64, _>(StandardNormal) * 0.3;
                let s = std::f64::consts::FRAC_1_SQRT_2;
                vec![s * (a + b), s * (a - b)]
            })
            .collect()
    }

    #[test]
    fn autoencoder_beats_mean_predictor() {
        let inputs = gaussian_cloud(300, 1);
        let arch = Architecture::new(2, vec![8], 2);
        let cfg = TrainConfig { epochs: 40, ..TrainConfig::default() };
        let report = train_autoencoder(&inputs, &arch, &cfg).unwrap();
        let mean = [inputs.iter().map(|x| x[0]).sum::<f64>() / 300.0, inputs.iter().map(|x| x[1]).sum::<f64>() / 300.0];
        let baseline =
            inputs.iter().map(|x| ((x[0] - mean[0]).powi(2) + (x[1] - mean[1]).powi(2)) / 2.0).sum::<f64>() / 300.0;
        assert!(report.final_loss < baseline, "{} vs {baseline}", report.final_loss);
    }

    #[test]
    fn autoencoder_zero_epochs_keeps_initial_mse() {
        let inputs = gaussian_cloud(50, 2);
        let arch = Architecture::new(2, vec![3], 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let report = train_autoencoder(&inputs, &arch, &cfg).unwrap();
        let init = arch.initialize(derive_seed(cfg.seed, &[0])).unwrap();
        assert_eq!(report.final_loss, reconstruction_mse(&init, &inputs).unwrap());
    }

    /// A linear bottleneck of width 1 should recover the leading principal axis.
    #[test]
    fn bottleneck_residual_is_orthogonal_to_principal_axis() {
        let inputs = gaussian_cloud(400, 3);
        // PCA oracle: eigenvectors of the 2x2 sample covariance in closed form.
        let n = inputs.len() as f64;
        let (mx, my) = (inputs.iter().map(|x| x[0]).sum::<f64>() / n, inputs.iter().map(|x| x[1]).sum::<f64>() / n);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for x in &inputs {
            sxx += (x[0] - mx).powi(2) / n;
            syy += (x[1] - my).powi(2) / n;
            sxy += (x[0] - mx) * (x[1] - my) / n;
        }
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let principal = [theta.cos(), theta.sin()];
        let minor = [-theta.sin(), theta.cos()];

        let mut arch = Architecture::new(2, vec![1], 2);
        arch.hidden_activation = Activation::Identity;
        let cfg = TrainConfig { epochs: 60, learning_rate: 0.005, ..TrainConfig::default() };
        let model = train_autoencoder(&inputs, &arch, &cfg).unwrap().params;
        let (mut along, mut across) = (0.0, 0.0);
        for x in &inputs {
            let r = model.output(x).unwrap();
            let res = [x[0] - r[0], x[1] - r[1]];
            along += (res[0] * principal[0] + res[1] * principal[1]).powi(2);
            across += (res[0] * minor[0] + res[1] * minor[1]).powi(2);
        }
        assert!(along < 0.1 * across, "along {along}, across {across}");
    }
}
