//! Attack generators: each maps a natural sample to a perturbed one.

mod deepfool;
mod gradient;
mod presets;
mod project;
mod spatial;
mod square;

pub use deepfool::deepfool;
pub use gradient::{fgsm, pgd, PgdParams};
pub use presets::{preset, restrict_epsilons, PRESET_NAMES};
pub use project::{clip_domain, norm_of, project_l1_offset, project_lp};
pub use spatial::{spatial_transform_attack, transform_image, SpatialParams};
pub use square::{square_attack, square_attack_traced, SquareProposal, SquareTrace};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{MeadError, Result};
use crate::nn::ModelParams;
use crate::objectives::{ObjectiveKind, ObjectiveReference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackFamily {
    Fgsm,
    Bim,
    Pgd,
    DeepFool,
    Square,
    SpatialTransform,
}

impl AttackFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Bim => "bim",
            AttackFamily::Pgd => "pgd",
            AttackFamily::DeepFool => "deepfool",
            AttackFamily::Square => "square",
            AttackFamily::SpatialTransform => "spatialtransform",
        }
    }

    /// Whether the family uses an objective (DeepFool and spatial search do not).
    pub fn uses_objective(self) -> bool {
        !matches!(self, AttackFamily::DeepFool | AttackFamily::SpatialTransform)
    }

    /// Whether outcomes are confined to an epsilon ball.
    pub fn norm_constrained(self) -> bool {
        !matches!(self, AttackFamily::DeepFool | AttackFamily::SpatialTransform)
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Valid region for perturbed inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputDomain {
    /// Pixel data: every coordinate clipped to `[0, 1]`.
    #[default]
    Unit,
    /// No box constraint (synthetic data).
    Unbounded,
}

impl InputDomain {
    pub fn apply(self, x: Vec<f64>) -> Vec<f64> {
        match self {
            InputDomain::Unit => clip_domain(&x),
            InputDomain::Unbounded => x,
        }
    }
}

pub const DEFAULT_STEPS: usize = 40;
pub const DEFAULT_DEEPFOOL_ITERS: usize = 50;
pub const DEFAULT_DEEPFOOL_OVERSHOOT: f64 = 0.02;
pub const DEFAULT_SQUARE_ITERS: usize = 300;

/// One attack arm: family, objective, norm, budget and iteration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub family: AttackFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveKind>,
    pub norm: Norm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Iterations (PGD/BIM steps, DeepFool max iterations, Square queries).
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to `2.5 * epsilon / steps` for PGD/BIM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub random_init: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overshoot: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SpatialParams>,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

impl AttackSpec {
    fn base(family: AttackFamily, objective: Option<ObjectiveKind>, norm: Norm, epsilon: Option<f64>) -> Self {
        AttackSpec {
            family,
            objective,
            norm,
            epsilon,
            steps: DEFAULT_STEPS,
            step_size: None,
            random_init: false,
            overshoot: None,
            spatial: None,
            seed: 0,
        }
    }

    pub fn fgsm(objective: ObjectiveKind, epsilon: f64) -> Self {
        let mut s = Self::base(AttackFamily::Fgsm, Some(objective), Norm::Linf, Some(epsilon));
        s.steps = 1;
        s
    }

    pub fn bim(objective: ObjectiveKind, epsilon: f64) -> Self {
        Self::base(AttackFamily::Bim, Some(objective), Norm::Linf, Some(epsilon))
    }

    pub fn pgd(objective: ObjectiveKind, norm: Norm, epsilon: f64) -> Self {
        let mut s = Self::base(AttackFamily::Pgd, Some(objective), norm, Some(epsilon));
        s.random_init = true;
        s
    }

    pub fn deepfool() -> Self {
        let mut s = Self::base(AttackFamily::DeepFool, None, Norm::L2, None);
        s.steps = DEFAULT_DEEPFOOL_ITERS;
        s.overshoot = Some(DEFAULT_DEEPFOOL_OVERSHOOT);
        s
    }

    pub fn square(objective: ObjectiveKind, epsilon: f64) -> Self {
        let mut s = Self::base(AttackFamily::Square, Some(objective), Norm::Linf, Some(epsilon));
        s.steps = DEFAULT_SQUARE_ITERS;
        s
    }

    pub fn spatial(params: SpatialParams) -> Self {
        let mut s = Self::base(AttackFamily::SpatialTransform, None, Norm::Linf, None);
        s.spatial = Some(params);
        s.steps = 1;
        s
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_step_size(mut self, step_size: f64) -> Self {
        self.step_size = Some(step_size);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Short human-readable name, e.g. `pgd-linf-ace-0.125`.
    pub fn label(&self) -> String {
        let mut s = format!("{}-{}", self.family, self.norm);
        if let Some(obj) = self.objective {
            s.push('-');
            s.push_str(obj.as_str());
        }
        if let Some(eps) = self.epsilon {
            s.push_str(&format!("-{eps}"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.label();
        if self.family.uses_objective() && self.objective.is_none() {
            return Err(MeadError::config(format!("{name}: objective required")));
        }
        if self.family.norm_constrained() {
            match self.epsilon {
                Some(e) if e >= 0.0 && e.is_finite() => {}
                Some(e) => return Err(MeadError::config(format!("{name}: invalid epsilon {e}"))),
                None => return Err(MeadError::config(format!("{name}: epsilon required"))),
            }
        }
        if matches!(self.family, AttackFamily::Fgsm | AttackFamily::Bim | AttackFamily::Square)
            && self.norm != Norm::Linf
        {
            return Err(MeadError::config(format!("{name}: family only supports linf")));
        }
        if matches!(self.family, AttackFamily::Bim | AttackFamily::Pgd) && self.steps == 0 {
            return Err(MeadError::config(format!("{name}: steps must be at least 1")));
        }
        if let Some(a) = self.step_size {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(MeadError::config(format!("{name}: invalid step size {a}")));
            }
        }
        if self.family == AttackFamily::SpatialTransform && self.spatial.is_none() {
            return Err(MeadError::config(format!("{name}: spatial parameters required")));
        }
        Ok(())
    }
}

/// A perturbed sample and whether it fools the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub x_adv: Vec<f64>,
    pub predicted: usize,
    /// `predicted != y` for the natural's true label `y`.
    pub fooled: bool,
    /// Index of the producing arm in the caller's arm list.
    pub arm: usize,
}

impl AttackOutcome {
    pub(crate) fn new(model: &ModelParams, x_adv: Vec<f64>, y: usize, arm: usize) -> Result<Self> {
        let predicted = model.predict_label(&x_adv)?;
        Ok(AttackOutcome { x_adv, predicted, fooled: predicted != y, arm })
    }
}

/// Everything an attack needs besides the sample itself.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub model: &'a ModelParams,
    pub domain: InputDomain,
    pub shape: Option<ImageShape>,
}

/// Reference for `objective` at the natural sample `(x, y)`.
pub(crate) fn reference_for(
    model: &ModelParams,
    objective: ObjectiveKind,
    x: &[f64],
    y: usize,
) -> Result<ObjectiveReference> {
    let natural = match objective {
        ObjectiveKind::Kl | ObjectiveKind::Fr => model.forward(x)?.probs,
        _ => Vec::new(),
    };
    Ok(ObjectiveReference::for_kind(objective, y, &natural))
}

/// Runs `spec` on the natural `(x, y)`. `seed` drives any randomness (random
/// init, square proposals) and should be derived per (sample, arm).
pub fn run_attack(
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
    arm: usize,
    x: &[f64],
    y: usize,
    seed: u64,
) -> Result<AttackOutcome> {
    spec.validate()?;
    let model = ctx.model;
    let x_adv = match spec.family {
        AttackFamily::Fgsm => {
            fgsm(model, x, y, spec.objective.expect("validated"), spec.epsilon.expect("validated"), ctx.domain)?
        }
        AttackFamily::Bim | AttackFamily::Pgd => {
            let eps = spec.epsilon.expect("validated");
            let params = PgdParams {
                epsilon: eps,
                norm: spec.norm,
                steps: spec.steps,
                step_size: spec.step_size.unwrap_or(2.5 * eps / spec.steps as f64),
                random_init: spec.family == AttackFamily::Pgd && spec.random_init,
                seed,
            };
            pgd(model, x, y, spec.objective.expect("validated"), &params, ctx.domain)?
        }
        AttackFamily::DeepFool => {
            deepfool(model, x, y, spec.steps, spec.overshoot.unwrap_or(DEFAULT_DEEPFOOL_OVERSHOOT), ctx.domain)?
        }
        AttackFamily::Square => square_attack(
            model,
            x,
            y,
            spec.objective.expect("validated"),
            spec.epsilon.expect("validated"),
            spec.steps,
            seed,
            ctx.shape,
            ctx.domain,
        )?,
        AttackFamily::SpatialTransform => {
            let shape =
                ctx.shape.ok_or_else(|| MeadError::config("spatial transform attack needs image-shaped inputs"))?;
            spatial_transform_attack(model, x, shape, y, spec.spatial.as_ref().expect("validated"))?
        }
    };
    AttackOutcome::new(model, x_adv, y, arm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(AttackSpec::pgd(ObjectiveKind::Ace, Norm::L2, 0.5).validate().is_ok());
        let mut bad = AttackSpec::fgsm(ObjectiveKind::Ace, 0.1);
        bad.norm = Norm::L2;
        assert!(bad.validate().is_err());
        let mut bad = AttackSpec::pgd(ObjectiveKind::Kl, Norm::L1, 5.0);
        bad.epsilon = None;
        assert!(bad.validate().is_err());
        assert!(AttackSpec::bim(ObjectiveKind::Fr, 0.1).with_steps(0).validate().is_err());
        assert!(AttackSpec::deepfool().validate().is_ok());
    }

    #[test]
    fn labels_are_descriptive() {
        assert_eq!(AttackSpec::pgd(ObjectiveKind::Gini, Norm::Linf, 0.125).label(), "pgd-linf-gini-0.125");
        assert_eq!(AttackSpec::deepfool().label(), "deepfool-l2");
    }
}
