use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{MeadError, Result};

/// Two isotropic 2-d Gaussians, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub n_per_class: usize,
    pub mu0: [f64; 2],
    pub mu1: [f64; 2],
    pub sigma: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec { n_per_class: 300, mu0: [1.0, 1.0], mu1: [-1.0, -1.0], sigma: 1.0, train_fraction: 0.7, seed: 0 }
    }
}

/// Samples both classes, shuffles, and splits into `(train, test)`.
pub fn gen_gaussian_dataset(spec: &GaussianSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.n_per_class == 0 {
        return Err(MeadError::config("n_per_class must be at least 1"));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(MeadError::config("sigma must be finite and non-negative"));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(MeadError::config("train_fraction must lie in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::with_capacity(2 * spec.n_per_class);
    for (label, mu) in [(0usize, spec.mu0), (1, spec.mu1)] {
        for _ in 0..spec.n_per_class {
            let x = mu.iter().map(|m| m + spec.sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            samples.push((x, label));
        }
    }
    samples.shuffle(&mut rng);
    let n_train = (spec.train_fraction * samples.len() as f64).round() as usize;
    let test = samples.split_off(n_train);
    let build = |part: Vec<(Vec<f64>, usize)>| {
        let (inputs, labels): (Vec<_>, Vec<_>) = part.into_iter().unzip();
        LabeledDataset::new(inputs, labels, 2)
    };
    Ok((build(samples)?, build(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        let (train, test) = gen_gaussian_dataset(&GaussianSpec::default()).unwrap();
        assert_eq!(train.len(), 420);
        assert_eq!(test.len(), 180);
        assert_eq!(train.dim(), 2);
    }

    #[test]
    fn zero_sigma_collapses_to_means() {
        let spec = GaussianSpec { sigma: 0.0, ..GaussianSpec::default() };
        let (train, _) = gen_gaussian_dataset(&spec).unwrap();
        for (x, &y) in train.inputs().iter().zip(train.labels()) {
            let mu = if y == 0 { spec.mu0 } else { spec.mu1 };
            assert_eq!(x.as_slice(), &mu);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = GaussianSpec::default();
        assert_eq!(gen_gaussian_dataset(&spec).unwrap(), gen_gaussian_dataset(&spec).unwrap());
        let other = GaussianSpec { seed: 1, ..spec };
        assert_ne!(gen_gaussian_dataset(&other).unwrap().0, gen_gaussian_dataset(&GaussianSpec::default()).unwrap().0);
    }
}
