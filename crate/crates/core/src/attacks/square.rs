//! Query-only random search under an L-infinity budget.
//!
//! Each iteration overwrites one contiguous block (a square for images, an
//! index range for flat inputs) of the current perturbation with a single
//! `+eps` or `-eps` value and keeps the proposal only if the objective grows.
//! Block side shrinks geometrically from 30% to 1% of the input side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{reference_for, InputDomain};
use crate::data::ImageShape;
use crate::error::Result;
use crate::nn::ModelParams;
use crate::objectives::{objective_value, ObjectiveKind, ObjectiveReference};

#[derive(Debug, Clone, PartialEq)]
pub struct SquareProposal {
    /// Flat indices the proposal overwrites.
    pub indices: Vec<usize>,
    /// `+eps` or `-eps`.
    pub value: f64,
    pub objective: f64,
    pub accepted: bool,
}

/// Full history of a run, for replay checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareTrace {
    pub x_adv: Vec<f64>,
    /// Objective at the start point.
    pub initial: f64,
    /// Best objective after each iteration.
    pub values: Vec<f64>,
    pub proposals: Vec<SquareProposal>,
}

fn block_fraction(iter: usize, iters: usize) -> f64 {
    if iters <= 1 {
        return 0.3;
    }
    let t = iter as f64 / (iters - 1) as f64;
    0.3 * (0.01f64 / 0.3).powf(t)
}

fn propose_block(rng: &mut ChaCha8Rng, frac: f64, dim: usize, shape: Option<ImageShape>) -> Vec<usize> {
    match shape {
        Some(s) if s.pixels() == dim && s.height > 0 && s.width > 0 => {
            let side = ((frac * s.height.min(s.width) as f64).round() as usize).clamp(1, s.height.min(s.width));
            let r0 = rng.random_range(0..=s.height - side);
            let c0 = rng.random_range(0..=s.width - side);
            (r0..r0 + side).flat_map(|r| (c0..c0 + side).map(move |c| r * s.width + c)).collect()
        }
        _ => {
            let len = ((frac * dim as f64).round() as usize).clamp(1, dim);
            let start = rng.random_range(0..=dim - len);
            (start..start + len).collect()
        }
    }
}

fn evaluate(model: &ModelParams, x: &[f64], objective: ObjectiveKind, reference: &ObjectiveReference) -> Result<f64> {
    let probs = model.forward(x)?.probs;
    objective_value(objective, reference, &probs)
}

#[allow(clippy::too_many_arguments)]
pub fn square_attack_traced(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    objective: ObjectiveKind,
    epsilon: f64,
    iters: usize,
    seed: u64,
    shape: Option<ImageShape>,
    domain: InputDomain,
) -> Result<SquareTrace> {
    let reference = reference_for(model, objective, x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = vec![0.0; x.len()];
    let mut current = x.to_vec();
    let initial = evaluate(model, &current, objective, &reference)?;
    let mut best = initial;
    let mut values = Vec::with_capacity(iters);
    let mut proposals = Vec::with_capacity(iters);
    for it in 0..iters {
        let indices = propose_block(&mut rng, block_fraction(it, iters), x.len(), shape);
        let value = if rng.random::<bool>() { epsilon } else { -epsilon };
        let mut candidate_delta = delta.clone();
        for &i in &indices {
            candidate_delta[i] = value;
        }
        let candidate = domain.apply(x.iter().zip(&candidate_delta).map(|(a, d)| a + d).collect());
        let score = evaluate(model, &candidate, objective, &reference)?;
        let accepted = score > best;
        if accepted {
            best = score;
            delta = candidate_delta;
            current = candidate;
        }
        values.push(best);
        proposals.push(SquareProposal { indices, value, objective: score, accepted });
    }
    Ok(SquareTrace { x_adv: current, initial, values, proposals })
}

#[allow(clippy::too_many_arguments)]
pub fn square_attack(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    objective: ObjectiveKind,
    epsilon: f64,
    iters: usize,
    seed: u64,
    shape: Option<ImageShape>,
    domain: InputDomain,
) -> Result<Vec<f64>> {
    Ok(square_attack_traced(model, x, y, objective, epsilon, iters, seed, shape, domain)?.x_adv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{norm_of, Norm};
    use crate::nn::Architecture;

    #[test]
    fn zero_iterations_is_identity() {
        let m = Architecture::new(4, vec![8], 3).initialize(1).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let out = square_attack(&m, &x, 0, ObjectiveKind::Ace, 0.3, 0, 9, None, InputDomain::Unit).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn trace_is_monotone_and_budget_holds() {
        let m = Architecture::new(16, vec![12], 3).initialize(2).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).fract()).collect();
        let shape = Some(ImageShape { height: 4, width: 4 });
        for obj in ObjectiveKind::ALL {
            let t = square_attack_traced(&m, &x, 1, obj, 0.2, 80, 5, shape, InputDomain::Unit).unwrap();
            assert!(t.values.windows(2).all(|w| w[1] >= w[0]));
            assert!(t.values.first().is_none_or(|v| *v >= t.initial));
            let offset: Vec<f64> = t.x_adv.iter().zip(&x).map(|(a, b)| a - b).collect();
            assert!(norm_of(&offset, Norm::Linf) <= 0.2 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn block_schedule_shrinks() {
        assert!((block_fraction(0, 100) - 0.3).abs() < 1e-15);
        assert!((block_fraction(99, 100) - 0.01).abs() < 1e-12);
        assert!(block_fraction(50, 100) < block_fraction(10, 100));
    }
}
