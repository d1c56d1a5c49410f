use super::InputDomain;
use crate::error::{MeadError, Result};
use crate::nn::ModelParams;

/// Minimal L2 step to the nearest linearized boundary between the true class
/// `y` and a competitor, repeated until the label changes or `max_iter` runs out.
/// The accumulated perturbation is scaled by `1 + overshoot`.
pub fn deepfool(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    max_iter: usize,
    overshoot: f64,
    domain: InputDomain,
) -> Result<Vec<f64>> {
    let classes = model.output_dim();
    if classes < 2 {
        return Err(MeadError::config("deepfool needs at least two classes"));
    }
    let mut total = vec![0.0; x.len()];
    let mut current = x.to_vec();
    for _ in 0..max_iter {
        let logits = model.output(&current)?;
        if crate::nn::argmax(&logits) != y {
            break;
        }
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for k in (0..classes).filter(|&k| k != y) {
            let mut weights = vec![0.0; classes];
            weights[k] = 1.0;
            weights[y] = -1.0;
            let w = model.logit_gradient(&current, &weights)?;
            let f = logits[k] - logits[y];
            let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if w_norm == 0.0 {
                continue;
            }
            let distance = f.abs() / w_norm;
            if best.as_ref().is_none_or(|(d, _, _)| distance < *d) {
                best = Some((distance, f, w));
            }
        }
        let Some((_, f, w)) = best else {
            break;
        };
        let w_sq: f64 = w.iter().map(|v| v * v).sum();
        let scale = (f.abs() + 1e-4) / w_sq;
        total.iter_mut().zip(&w).for_each(|(t, wi)| *t += scale * wi);
        let candidate = x.iter().zip(&total).map(|(xi, t)| xi + (1.0 + overshoot) * t).collect();
        current = domain.apply(candidate);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture, Layer};

    fn linear_model() -> ModelParams {
        ModelParams::new(vec![Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![1.0, 2.0, -1.0, 0.5],
            bias: vec![0.3, -0.2],
            activation: Activation::Identity,
            dropout: 0.0,
        }])
        .unwrap()
    }

    #[test]
    fn misclassified_input_is_untouched() {
        let m = linear_model();
        let x = [-3.0, -3.0];
        assert_eq!(m.predict_label(&x).unwrap(), 1);
        assert_eq!(deepfool(&m, &x, 0, 50, 0.02, InputDomain::Unbounded).unwrap(), x.to_vec());
    }

    #[test]
    fn linear_model_single_step_matches_hyperplane_distance() {
        let m = linear_model();
        let x = [1.0, 1.0];
        assert_eq!(m.predict_label(&x).unwrap(), 0);
        // boundary: (w1 - w0) . x + (b1 - b0) = 0 with w1 - w0 = (-2, -1.5), b1 - b0 = -0.5
        let (a, b, c) = (-2.0f64, -1.5f64, -0.5f64);
        let exact = (a * x[0] + b * x[1] + c).abs() / (a * a + b * b).sqrt();
        let overshoot = 0.02;
        let adv = deepfool(&m, &x, 0, 1, overshoot, InputDomain::Unbounded).unwrap();
        let moved = ((adv[0] - x[0]).powi(2) + (adv[1] - x[1]).powi(2)).sqrt();
        assert!(moved >= exact);
        assert!(moved <= exact * (1.0 + overshoot) + 1e-3);
        assert_eq!(m.predict_label(&adv).unwrap(), 1);
    }

    #[test]
    fn nonlinear_model_is_fooled() {
        let m = Architecture::new(4, vec![16], 3).initialize(12).unwrap();
        let x = [0.4, 0.1, 0.9, 0.5];
        let y = m.predict_label(&x).unwrap();
        let adv = deepfool(&m, &x, y, 50, 0.02, InputDomain::Unbounded).unwrap();
        assert_ne!(m.predict_label(&adv).unwrap(), y);
    }
}
