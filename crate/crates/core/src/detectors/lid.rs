//! Local intrinsic dimensionality features with a logistic head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::logistic::LogisticHead;
use crate::attacks::InputDomain;
use crate::error::{MeadError, Result};
use crate::nn::ModelParams;

const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidSettings {
    /// Neighbours per estimate.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Standard deviation of the noisy negatives; defaults to the training attack's epsilon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Maximum number of natural feature vectors kept as the reference batch.
    #[serde(default = "default_reference_size")]
    pub reference_size: usize,
}

fn default_k() -> usize {
    20
}
fn default_reference_size() -> usize {
    500
}

impl Default for LidSettings {
    fn default() -> Self {
        LidSettings { k: default_k(), noise_sigma: None, reference_size: default_reference_size() }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// MLE of the local intrinsic dimensionality of `query` against `reference`:
/// `-1 / mean_i log(r_i / r_k)` over the `k` nearest distances.
///
/// Distances are floored at 1e-12. When every neighbour is equidistant the
/// mean log-ratio is 0 and the estimate is reported as `f64::MAX`.
pub fn lid_estimate(query: &[f64], reference: &[Vec<f64>], k: usize) -> Result<f64> {
    if k < 2 || reference.len() <= k {
        return Err(MeadError::config(format!(
            "lid needs 2 <= k < reference size, got k = {k} with {} references",
            reference.len()
        )));
    }
    let mut d: Vec<f64> = reference.iter().map(|r| distance(query, r).max(DISTANCE_FLOOR)).collect();
    d.select_nth_unstable_by(k - 1, f64::total_cmp);
    let nearest = &mut d[..k];
    nearest.sort_unstable_by(f64::total_cmp);
    Ok(lid_from_sorted(nearest))
}

fn lid_from_sorted(nearest: &[f64]) -> f64 {
    let rk = nearest[nearest.len() - 1];
    let mean = nearest.iter().map(|r| (r / rk).ln()).sum::<f64>() / nearest.len() as f64;
    if mean == 0.0 {
        f64::MAX
    } else {
        -1.0 / mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidDetector {
    pub k: usize,
    /// Reference activations, one list per representation (input, hidden layers, logits).
    pub reference: Vec<Vec<Vec<f64>>>,
    pub head: LogisticHead,
}

fn representations(model: &ModelParams, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let f = model.features(x)?;
    let mut reps = vec![x.to_vec()];
    reps.extend(f.hidden);
    reps.push(f.logits);
    Ok(reps)
}

impl LidDetector {
    /// Per-representation LID of `x`. A reference point identical to the
    /// query is the query itself and is skipped.
    pub fn features(&self, model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
        let reps = representations(model, x)?;
        reps.iter()
            .zip(&self.reference)
            .map(|(q, refs)| {
                let mut d: Vec<f64> = refs.iter().map(|r| distance(q, r)).filter(|&v| v > 0.0).collect();
                if d.len() < 2 {
                    return Ok(0.0);
                }
                let k = self.k.min(d.len());
                d.select_nth_unstable_by(k - 1, f64::total_cmp);
                let nearest = &mut d[..k];
                nearest.sort_unstable_by(f64::total_cmp);
                // log keeps the equidistant sentinel finite for the head
                Ok(lid_from_sorted(nearest).min(1e6).ln_1p())
            })
            .collect()
    }

    pub fn fit(
        model: &ModelParams,
        naturals: &[Vec<f64>],
        adversarials: &[Vec<f64>],
        settings: &LidSettings,
        noise_sigma: f64,
        domain: InputDomain,
        seed: u64,
    ) -> Result<Self> {
        if naturals.len() < 3 || adversarials.is_empty() {
            return Err(MeadError::config("lid detector needs at least 3 naturals and 1 adversarial"));
        }
        if settings.k < 2 {
            return Err(MeadError::config("lid k must be at least 2"));
        }
        let keep = naturals.len().min(settings.reference_size.max(3));
        let mut reference: Vec<Vec<Vec<f64>>> = Vec::new();
        for x in &naturals[..keep] {
            for (layer, rep) in representations(model, x)?.into_iter().enumerate() {
                if reference.len() <= layer {
                    reference.push(Vec::new());
                }
                reference[layer].push(rep);
            }
        }
        let mut detector = LidDetector {
            k: settings.k,
            reference,
            head: LogisticHead { mean: Vec::new(), scale: Vec::new(), weights: Vec::new(), bias: 0.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| MeadError::config(e.to_string()))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for x in naturals {
            features.push(detector.features(model, x)?);
            labels.push(false);
            let noisy = domain.apply(x.iter().map(|v| v + noise.sample(&mut rng)).collect());
            features.push(detector.features(model, &noisy)?);
            labels.push(false);
        }
        for x in adversarials {
            features.push(detector.features(model, x)?);
            labels.push(true);
        }
        detector.head = LogisticHead::fit(&features, &labels)?;
        Ok(detector)
    }

    pub fn score(&self, model: &ModelParams, x: &[f64]) -> Result<f64> {
        Ok(self.head.predict(&self.features(model, x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn segment_estimate_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut total = 0.0;
        for _ in 0..50 {
            let refs: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.random::<f64>(), 0.0, 0.0]).collect();
            let q = [0.25 + 0.5 * rng.random::<f64>(), 0.0, 0.0];
            total += lid_estimate(&q, &refs, 20).unwrap();
        }
        let mean = total / 50.0;
        assert!((mean - 1.0).abs() <= 0.3, "{mean}");
    }

    #[test]
    fn disc_estimate_near_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let disc = |rng: &mut ChaCha8Rng| loop {
            let (a, b) = (2.0 * rng.random::<f64>() - 1.0, 2.0 * rng.random::<f64>() - 1.0);
            if a * a + b * b <= 1.0 {
                return vec![a, b];
            }
        };
        let mut total = 0.0;
        for _ in 0..50 {
            let refs: Vec<Vec<f64>> = (0..2000).map(|_| disc(&mut rng)).collect();
            let q: Vec<f64> = disc(&mut rng).iter().map(|v| v * 0.5).collect();
            total += lid_estimate(&q, &refs, 20).unwrap();
        }
        let mean = total / 50.0;
        assert!((mean - 2.0).abs() <= 0.5, "{mean}");
    }

    #[test]
    fn equidistant_and_duplicate_references_stay_finite() {
        let refs: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 4.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let equal = lid_estimate(&[0.0, 0.0], &refs, 4).unwrap();
        assert_eq!(equal, f64::MAX);
        let dupes = vec![vec![1.0, 1.0]; 6];
        let v = lid_estimate(&[1.0, 1.0], &dupes, 3).unwrap();
        assert!(v > 0.0 && !v.is_nan());
        assert!(lid_estimate(&[0.0, 0.0], &refs, 8).is_err());
        assert!(lid_estimate(&[0.0, 0.0], &refs, 1).is_err());
    }

    #[test]
    fn hand_computed_estimate() {
        let refs: Vec<Vec<f64>> = [1.0, 2.0, 4.0, 9.0].iter().map(|&v| vec![v]).collect();
        // r = (1, 2, 4): mean log(r/4) = (ln(1/4) + ln(1/2)) / 3
        let expected = -3.0 / ((0.25f64).ln() + (0.5f64).ln());
        assert!((lid_estimate(&[0.0], &refs, 3).unwrap() - expected).abs() < 1e-12);
    }
}
