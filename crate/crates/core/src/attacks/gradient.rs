//! Gradient-sign and projected-gradient attacks (FGSM, BIM, PGD).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::project::{norm_of, project_lp};
use super::{reference_for, InputDomain, Norm};
use crate::error::Result;
use crate::nn::ModelParams;
use crate::objectives::ObjectiveKind;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single L-infinity step `x + eps * sign(grad)`.
pub fn fgsm(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    objective: ObjectiveKind,
    epsilon: f64,
    domain: InputDomain,
) -> Result<Vec<f64>> {
    let reference = reference_for(model, objective, x, y)?;
    let grad = model.input_gradient(x, objective, &reference)?;
    let stepped = x.iter().zip(&grad).map(|(v, g)| v + epsilon * sign(*g)).collect();
    Ok(domain.apply(stepped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdParams {
    pub epsilon: f64,
    pub norm: Norm,
    pub steps: usize,
    pub step_size: f64,
    /// Start from a uniform draw inside the ball (PGD) instead of `x` (BIM).
    pub random_init: bool,
    pub seed: u64,
}

/// Uniform sample from the `p`-ball of radius `eps` in `d` dimensions.
pub(crate) fn sample_ball(rng: &mut ChaCha8Rng, d: usize, eps: f64, p: Norm) -> Vec<f64> {
    match p {
        Norm::Linf => (0..d).map(|_| rng.random_range(-eps..=eps)).collect(),
        Norm::L2 => {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm_of(&dir, Norm::L2).max(f64::MIN_POSITIVE);
            let radius = eps * rng.random::<f64>().powf(1.0 / d as f64);
            dir.into_iter().map(|v| v * radius / n).collect()
        }
        Norm::L1 => {
            // First d coordinates of a flat Dirichlet(1, .., 1) on d+1 cells, random signs.
            let e: Vec<f64> = (0..=d).map(|_| rng.sample(Exp1)).collect();
            let total: f64 = e.iter().sum();
            e[..d]
                .iter()
                .map(|v| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * eps * v / total
                })
                .collect()
        }
    }
}

/// Ascent direction of unit `p`-norm (zero if the gradient vanishes).
fn ascent_direction(grad: &[f64], p: Norm) -> Vec<f64> {
    match p {
        Norm::Linf => grad.iter().map(|g| sign(*g)).collect(),
        Norm::L2 => {
            let n = norm_of(grad, Norm::L2);
            if n == 0.0 {
                vec![0.0; grad.len()]
            } else {
                grad.iter().map(|g| g / n).collect()
            }
        }
        Norm::L1 => {
            let k = grad.len().div_ceil(100).max(1);
            let mut order: Vec<usize> = (0..grad.len()).collect();
            order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
            let mut dir = vec![0.0; grad.len()];
            for &i in order.iter().take(k) {
                dir[i] = sign(grad[i]) / k as f64;
            }
            dir
        }
    }
}

/// Iterated projected ascent on `objective` inside the `(norm, epsilon)` ball around `x`.
pub fn pgd(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    objective: ObjectiveKind,
    params: &PgdParams,
    domain: InputDomain,
) -> Result<Vec<f64>> {
    let reference = reference_for(model, objective, x, y)?;
    let mut current = if params.random_init && params.epsilon > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let noise = sample_ball(&mut rng, x.len(), params.epsilon, params.norm);
        let start: Vec<f64> = x.iter().zip(noise).map(|(a, b)| a + b).collect();
        domain.apply(project_lp(&start, x, params.epsilon, params.norm))
    } else {
        x.to_vec()
    };
    for _ in 0..params.steps {
        let grad = model.input_gradient(&current, objective, &reference)?;
        if grad.iter().all(|g| *g == 0.0) {
            continue;
        }
        let dir = ascent_direction(&grad, params.norm);
        let stepped: Vec<f64> = current.iter().zip(&dir).map(|(c, d)| c + params.step_size * d).collect();
        current = domain.apply(project_lp(&stepped, x, params.epsilon, params.norm));
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture, Layer};

    fn identity_model() -> ModelParams {
        ModelParams::new(vec![Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
            dropout: 0.0,
        }])
        .unwrap()
    }

    #[test]
    fn fgsm_zero_eps_is_identity() {
        let m = identity_model();
        let x = [0.3, 0.6];
        assert_eq!(fgsm(&m, &x, 0, ObjectiveKind::Ace, 0.0, InputDomain::Unit).unwrap(), x.to_vec());
    }

    #[test]
    fn fgsm_sign_matches_hand_gradient() {
        // ACE gradient for the identity model is softmax(x) - e_y = (p0 - 1, 1 - p0) for y = 0.
        let m = identity_model();
        let x = [0.5, 0.4];
        let out = fgsm(&m, &x, 0, ObjectiveKind::Ace, 0.1, InputDomain::Unbounded).unwrap();
        assert!((out[0] - 0.4).abs() < 1e-15);
        assert!((out[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_saturating_pgd_step_equals_fgsm() {
        let m = Architecture::new(3, vec![6], 3).initialize(4).unwrap();
        let x = [0.2, 0.5, 0.7];
        for obj in ObjectiveKind::ALL {
            let f = fgsm(&m, &x, 1, obj, 0.05, InputDomain::Unit).unwrap();
            let params =
                PgdParams { epsilon: 0.05, norm: Norm::Linf, steps: 1, step_size: 0.2, random_init: false, seed: 0 };
            assert_eq!(pgd(&m, &x, 1, obj, &params, InputDomain::Unit).unwrap(), f, "{obj}");
        }
    }

    #[test]
    fn vanishing_step_returns_input() {
        let m = Architecture::new(3, vec![6], 3).initialize(4).unwrap();
        let x = [0.2, 0.5, 0.7];
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            let params = PgdParams { epsilon: 0.5, norm, steps: 1, step_size: 0.0, random_init: false, seed: 0 };
            assert_eq!(pgd(&m, &x, 0, ObjectiveKind::Ace, &params, InputDomain::Unit).unwrap(), x.to_vec());
        }
    }

    #[test]
    fn l1_direction_is_sparse() {
        let g: Vec<f64> = (0..250).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let dir = ascent_direction(&g, Norm::L1);
        assert_eq!(dir.iter().filter(|v| **v != 0.0).count(), 3);
        assert!((norm_of(&dir, Norm::L1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in [Norm::L1, Norm::L2, Norm::Linf] {
            for _ in 0..200 {
                let v = sample_ball(&mut rng, 7, 0.8, p);
                assert!(norm_of(&v, p) <= 0.8 * (1.0 + 1e-12));
            }
        }
    }
}
