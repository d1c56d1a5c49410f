//! Named attack grids.

use super::{AttackSpec, Norm};
use crate::error::{MeadError, Result};
use crate::objectives::ObjectiveKind;

pub const PRESET_NAMES: [&str; 3] = ["paper-l1", "paper-l2", "paper-linf"];

const L1_EPSILONS: [f64; 7] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0];
const L2_EPSILONS: [f64; 7] = [0.125, 0.25, 0.3125, 0.5, 1.0, 1.5, 2.0];
const LINF_EPSILONS: [f64; 6] = [0.0315, 0.0625, 0.125, 0.25, 0.3125, 0.5];
const SQUARE_EPSILON: f64 = 0.3125;

/// Expands a preset name into its arms (every objective for every objective-driven family).
pub fn preset(name: &str) -> Result<Vec<AttackSpec>> {
    let objectives = ObjectiveKind::ALL;
    let mut specs = Vec::new();
    match name {
        "paper-l1" => {
            for eps in L1_EPSILONS {
                specs.extend(objectives.iter().map(|&o| AttackSpec::pgd(o, Norm::L1, eps)));
            }
        }
        "paper-l2" => {
            for eps in L2_EPSILONS {
                specs.extend(objectives.iter().map(|&o| AttackSpec::pgd(o, Norm::L2, eps)));
            }
            specs.push(AttackSpec::deepfool());
        }
        "paper-linf" => {
            for eps in LINF_EPSILONS {
                for &o in &objectives {
                    specs.push(AttackSpec::fgsm(o, eps));
                    specs.push(AttackSpec::bim(o, eps));
                    specs.push(AttackSpec::pgd(o, Norm::Linf, eps));
                }
            }
            specs.extend(objectives.iter().map(|&o| AttackSpec::square(o, SQUARE_EPSILON)));
        }
        other => return Err(MeadError::config(format!("unknown preset '{other}', expected one of {PRESET_NAMES:?}"))),
    }
    Ok(specs)
}

/// Keeps norm-constrained arms whose epsilon is in `keep`, plus every unconstrained arm.
pub fn restrict_epsilons(specs: Vec<AttackSpec>, keep: &[f64]) -> Vec<AttackSpec> {
    specs
        .into_iter()
        .filter(|s| s.epsilon.is_none_or(|e| keep.iter().any(|k| (k - e).abs() <= 1e-12 * k.abs().max(1.0))))
        .collect()
}
