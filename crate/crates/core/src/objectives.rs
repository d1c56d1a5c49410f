//! Attack objectives as functions of the adversarial soft prediction.
//!
//! Each objective is a scalar the attacker maximizes. Values and gradients
//! are taken with respect to the adversarial probability vector `q_adv`; the
//! network module chains these gradients through the softmax and the layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};

/// Lower clamp applied to probabilities before a log, division or square-root ratio.
pub const PROB_FLOOR: f64 = 1e-12;

/// Upper clamp on the Bhattacharyya coefficient when differentiating `arccos`.
pub const FR_COS_CAP: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Ace,
    Kl,
    Fr,
    Gini,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [ObjectiveKind::Ace, ObjectiveKind::Kl, ObjectiveKind::Fr, ObjectiveKind::Gini];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Ace => "ace",
            ObjectiveKind::Kl => "kl",
            ObjectiveKind::Fr => "fr",
            ObjectiveKind::Gini => "gini",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = MeadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ace" => Ok(ObjectiveKind::Ace),
            "kl" => Ok(ObjectiveKind::Kl),
            "fr" => Ok(ObjectiveKind::Fr),
            "gini" => Ok(ObjectiveKind::Gini),
            other => Err(MeadError::config(format!("unknown objective '{other}'"))),
        }
    }
}

/// What an objective compares the adversarial prediction against.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveReference {
    /// True label, for ACE.
    Label(usize),
    /// Soft prediction on the natural input, for KL and FR.
    Natural(Vec<f64>),
    /// Gini depends on the adversarial prediction only.
    None,
}

impl ObjectiveReference {
    /// Builds the reference `kind` needs from the natural sample's label and prediction.
    pub fn for_kind(kind: ObjectiveKind, label: usize, natural_probs: &[f64]) -> Self {
        match kind {
            ObjectiveKind::Ace => ObjectiveReference::Label(label),
            ObjectiveKind::Kl | ObjectiveKind::Fr => ObjectiveReference::Natural(natural_probs.to_vec()),
            ObjectiveKind::Gini => ObjectiveReference::None,
        }
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

/// Adversarial cross-entropy with a one-hot target at `label`: `-log q_adv[label]`.
pub fn ace_loss(q_adv: &[f64], label: usize) -> f64 {
    -clamp_prob(q_adv[label]).ln()
}

/// `KL(q_nat || q_adv)`. Terms with `q_nat[y] == 0` contribute nothing.
pub fn kl_loss(q_nat: &[f64], q_adv: &[f64]) -> f64 {
    let total: f64 = q_nat
        .iter()
        .zip(q_adv)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| {
            let p = clamp_prob(p);
            p * (p / clamp_prob(q)).ln()
        })
        .sum();
    // Gibbs' inequality; rounding can leave a tiny negative residue.
    total.max(0.0)
}

/// Euclidean distance between the square-root embeddings of two distributions.
fn hellinger_chord(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = clamp_prob(p).sqrt() - clamp_prob(q).sqrt();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Fisher–Rao distance `2 arccos(sum sqrt(q_nat q_adv))`.
///
/// Evaluated in the equivalent half-angle form `4 asin(h / 2)`, where `h` is the
/// chord between the square-root embeddings. On the simplex the two agree, and
/// the half-angle form is exact at `q_nat == q_adv` and symmetric bit-for-bit.
pub fn fr_loss(q_nat: &[f64], q_adv: &[f64]) -> f64 {
    let h = hellinger_chord(q_nat, q_adv);
    4.0 * (0.5 * h).clamp(0.0, 1.0).asin().min(std::f64::consts::FRAC_PI_4)
}

/// `1 - ||q_adv||_2`.
pub fn gini_loss(q_adv: &[f64]) -> f64 {
    let norm = q_adv.iter().map(|q| q * q).sum::<f64>().sqrt();
    let upper = 1.0 - 1.0 / (q_adv.len() as f64).sqrt();
    (1.0 - norm).clamp(0.0, upper)
}

fn check_reference(kind: ObjectiveKind, reference: &ObjectiveReference, classes: usize) -> Result<()> {
    match (kind, reference) {
        (ObjectiveKind::Ace, ObjectiveReference::Label(y)) if *y < classes => Ok(()),
        (ObjectiveKind::Ace, ObjectiveReference::Label(y)) => {
            Err(MeadError::config(format!("label {y} out of range for {classes} classes")))
        }
        (ObjectiveKind::Kl | ObjectiveKind::Fr, ObjectiveReference::Natural(q)) if q.len() == classes => Ok(()),
        (ObjectiveKind::Kl | ObjectiveKind::Fr, ObjectiveReference::Natural(q)) => {
            Err(MeadError::config(format!("natural prediction has {} classes, adversarial has {classes}", q.len())))
        }
        (ObjectiveKind::Gini, ObjectiveReference::None) => Ok(()),
        (kind, other) => Err(MeadError::config(format!("objective {kind} cannot use reference {other:?}"))),
    }
}

pub fn objective_value(kind: ObjectiveKind, reference: &ObjectiveReference, q_adv: &[f64]) -> Result<f64> {
    check_reference(kind, reference, q_adv.len())?;
    Ok(match (kind, reference) {
        (ObjectiveKind::Ace, ObjectiveReference::Label(y)) => ace_loss(q_adv, *y),
        (ObjectiveKind::Kl, ObjectiveReference::Natural(q_nat)) => kl_loss(q_nat, q_adv),
        (ObjectiveKind::Fr, ObjectiveReference::Natural(q_nat)) => fr_loss(q_nat, q_adv),
        (ObjectiveKind::Gini, _) => gini_loss(q_adv),
        _ => unreachable!("reference checked above"),
    })
}

/// Gradient of [`objective_value`] with respect to `q_adv`.
///
/// Only the component tangent to the simplex is meaningful; the softmax
/// backward pass discards the rest.
pub fn objective_grad_probs(kind: ObjectiveKind, reference: &ObjectiveReference, q_adv: &[f64]) -> Result<Vec<f64>> {
    check_reference(kind, reference, q_adv.len())?;
    let mut grad = vec![0.0; q_adv.len()];
    match (kind, reference) {
        (ObjectiveKind::Ace, ObjectiveReference::Label(y)) => {
            grad[*y] = -1.0 / clamp_prob(q_adv[*y]);
        }
        (ObjectiveKind::Kl, ObjectiveReference::Natural(q_nat)) => {
            for ((g, &p), &q) in grad.iter_mut().zip(q_nat).zip(q_adv) {
                if p > 0.0 {
                    *g = -clamp_prob(p) / clamp_prob(q);
                }
            }
        }
        (ObjectiveKind::Fr, ObjectiveReference::Natural(q_nat)) => {
            let h = hellinger_chord(q_nat, q_adv);
            let cos = (1.0 - 0.5 * h * h).clamp(-1.0, FR_COS_CAP);
            let outer = -2.0 / (1.0 - cos * cos).sqrt();
            for ((g, &p), &q) in grad.iter_mut().zip(q_nat).zip(q_adv) {
                *g = outer * 0.5 * (clamp_prob(p) / clamp_prob(q)).sqrt();
            }
        }
        (ObjectiveKind::Gini, _) => {
            let norm = q_adv.iter().map(|q| q * q).sum::<f64>().sqrt();
            for (g, &q) in grad.iter_mut().zip(q_adv) {
                *g = -q / norm;
            }
        }
        _ => unreachable!("reference checked above"),
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn ace_hand_values() {
        assert_eq!(ace_loss(&[1.0, 0.0], 0), 0.0);
        assert_abs_diff_eq!(ace_loss(&[0.5, 0.5], 0), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(ace_loss(&[0.25, 0.75], 0), 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn kl_hand_values() {
        let q = [0.2, 0.3, 0.5];
        assert_eq!(kl_loss(&q, &q), 0.0);
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert_abs_diff_eq!(kl_loss(&[0.5, 0.5], &[0.25, 0.75]), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.143_841_036_225_890_1, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_loss(&[1.0, 0.0, 0.0, 0.0], &[0.25; 4]), 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn fr_hand_values() {
        let q = [0.1, 0.6, 0.3];
        assert_eq!(fr_loss(&q, &q), 0.0);
        assert_abs_diff_eq!(fr_loss(&[1.0, 0.0], &[0.0, 1.0]), std::f64::consts::PI, epsilon = 1e-5);
        let expected = 2.0 * 0.5f64.sqrt().acos();
        assert_abs_diff_eq!(fr_loss(&[1.0, 0.0], &[0.5, 0.5]), expected, epsilon = 1e-5);
        assert_abs_diff_eq!(expected, std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn fr_matches_arccos_form_off_the_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_simplex(&mut rng, 5);
            let b = random_simplex(&mut rng, 5);
            let bc: f64 = a.iter().zip(&b).map(|(p, q)| (p * q).sqrt()).sum();
            assert_abs_diff_eq!(fr_loss(&a, &b), 2.0 * bc.clamp(-1.0, 1.0).acos(), epsilon = 1e-7);
        }
    }

    #[test]
    fn gini_hand_values() {
        assert_eq!(gini_loss(&[0.0, 1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(gini_loss(&[0.5, 0.5]), 1.0 - 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(gini_loss(&[0.8, 0.2]), 1.0 - 0.68f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn kind_strings_roundtrip() {
        for kind in ObjectiveKind::ALL {
            assert_eq!(kind.as_str().parse::<ObjectiveKind>().unwrap(), kind);
        }
        assert!("ACE".parse::<ObjectiveKind>().is_err());
    }

    #[test]
    fn mismatched_reference_is_config_error() {
        let q = [0.5, 0.5];
        let err = objective_value(ObjectiveKind::Kl, &ObjectiveReference::Label(0), &q).unwrap_err();
        assert!(matches!(err, MeadError::Config(_)));
        assert!(objective_grad_probs(ObjectiveKind::Ace, &ObjectiveReference::None, &q).is_err());
        assert!(objective_value(ObjectiveKind::Ace, &ObjectiveReference::Label(2), &q).is_err());
    }

    #[test]
    fn boundary_gradients_are_finite() {
        let one_hot = [1.0, 0.0, 0.0];
        let g = objective_grad_probs(ObjectiveKind::Gini, &ObjectiveReference::None, &one_hot).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        let q = [0.3, 0.7];
        let g = objective_grad_probs(ObjectiveKind::Fr, &ObjectiveReference::Natural(q.to_vec()), &q).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        let g = objective_grad_probs(ObjectiveKind::Ace, &ObjectiveReference::Label(1), &one_hot).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn kl_gradient_matches_symbolic_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_simplex(&mut rng, 4);
            let q = random_simplex(&mut rng, 4);
            let g = objective_grad_probs(ObjectiveKind::Kl, &ObjectiveReference::Natural(p.clone()), &q).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(g[i], -p[i] / q[i], epsilon = 1e-9 * (p[i] / q[i]).abs().max(1.0));
            }
        }
    }

    /// Central differences along simplex-tangent directions `e_i - e_j`.
    #[test]
    fn gradients_match_tangent_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let step = 1e-6;
        for trial in 0..400 {
            let c = 2 + trial % 5;
            let kind = ObjectiveKind::ALL[trial % 4];
            let q = random_simplex(&mut rng, c);
            if q.iter().any(|&v| v < 1e-3) {
                continue;
            }
            let nat = random_simplex(&mut rng, c);
            let reference = ObjectiveReference::for_kind(kind, rng.random_range(0..c), &nat);
            let g = objective_grad_probs(kind, &reference, &q).unwrap();
            for i in 0..c {
                for j in 0..c {
                    if i == j {
                        continue;
                    }
                    let mut plus = q.clone();
                    plus[i] += step;
                    plus[j] -= step;
                    let mut minus = q.clone();
                    minus[i] -= step;
                    minus[j] += step;
                    let fd = (objective_value(kind, &reference, &plus).unwrap()
                        - objective_value(kind, &reference, &minus).unwrap())
                        / (2.0 * step);
                    let analytic = g[i] - g[j];
                    let scale = analytic.abs().max(fd.abs()).max(1.0);
                    assert!((analytic - fd).abs() / scale <= 1e-5, "{kind} c={c}: analytic {analytic} vs fd {fd}");
                }
            }
        }
    }
}
