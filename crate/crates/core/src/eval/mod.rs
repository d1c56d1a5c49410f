//! The multi-armed worst-case evaluation: sifting, per-sample verdicts,
//! confusion counts and ROC summaries, plus the single-armed baselines.
//!
//! A natural sample with at least one successful arm is a positive; it is
//! detected at threshold `gamma` only when *every* successful arm scores at
//! least `gamma`, which is the same as its minimum arm score reaching `gamma`.

mod roc;

pub use roc::{auroc, fpr_at_95_tpr, roc_points, RocPoint};

use std::collections::BTreeMap;
use std::fmt;

use crate::attacks::{AttackFamily, AttackOutcome, AttackSpec, Norm};
use crate::error::{MeadError, Result};
use crate::nn::ModelParams;
use crate::objectives::ObjectiveKind;

/// Keeps the outcomes that actually fool the classifier on label `y`.
///
/// The label is recomputed from `x_adv`; a stale `fooled` flag is corrected.
pub fn sift(model: &ModelParams, y: usize, outcomes: &[AttackOutcome]) -> Result<Vec<AttackOutcome>> {
    let mut kept = Vec::new();
    for o in outcomes {
        let predicted = model.predict_label(&o.x_adv)?;
        if predicted != y {
            kept.push(AttackOutcome { predicted, fooled: true, ..o.clone() });
        }
    }
    Ok(kept)
}

/// Detector view of one natural sample and its successful perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleVerdict {
    pub natural_score: f64,
    /// `(arm index, score)` of every successful arm.
    pub adversarial: Vec<(usize, f64)>,
}

impl SampleVerdict {
    pub fn new(natural_score: f64, adversarial: Vec<(usize, f64)>) -> Self {
        SampleVerdict { natural_score, adversarial }
    }

    /// Minimum score over successful arms; `None` when no arm succeeded.
    pub fn worst_case(&self) -> Option<f64> {
        self.adversarial.iter().map(|(_, s)| *s).reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

/// Counts under the rule "detected iff score >= gamma".
pub fn confusion_counts(verdicts: &[SampleVerdict], gamma: f64) -> Confusion {
    let mut c = Confusion::default();
    for v in verdicts {
        if let Some(worst) = v.worst_case() {
            if worst >= gamma {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        if v.natural_score >= gamma {
            c.fp += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

/// Arms sharing a norm and budget. Unconstrained DeepFool arms join every
/// group of their norm; spatial arms form their own group.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmGroup {
    pub norm: Norm,
    /// `None` for a group of unconstrained arms only.
    pub epsilon: Option<f64>,
    /// Indices into the arm list.
    pub arms: Vec<usize>,
}

impl ArmGroup {
    pub fn label(&self) -> String {
        match self.epsilon {
            Some(e) => format!("{}/{e}", self.norm),
            None => format!("{}/unconstrained", self.norm),
        }
    }
}

pub fn group_arms(specs: &[AttackSpec]) -> Vec<ArmGroup> {
    let mut constrained: BTreeMap<(Norm, u64), Vec<usize>> = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        if let (true, Some(eps)) = (s.family.norm_constrained(), s.epsilon) {
            constrained.entry((s.norm, eps.to_bits())).or_default().push(i);
        }
    }
    let mut groups: Vec<ArmGroup> = constrained
        .into_iter()
        .map(|((norm, bits), arms)| ArmGroup { norm, epsilon: Some(f64::from_bits(bits)), arms })
        .collect();
    let mut orphans: BTreeMap<(Norm, AttackFamily), Vec<usize>> = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        if s.family.norm_constrained() {
            continue;
        }
        let mut attached = false;
        if s.family == AttackFamily::DeepFool {
            for g in groups.iter_mut().filter(|g| g.norm == s.norm) {
                g.arms.push(i);
                attached = true;
            }
        }
        if !attached {
            orphans.entry((s.norm, s.family)).or_default().push(i);
        }
    }
    groups.sort_by(|a, b| a.norm.cmp(&b.norm).then(a.epsilon.unwrap_or(0.0).total_cmp(&b.epsilon.unwrap_or(0.0))));
    groups.extend(orphans.into_iter().map(|((norm, _), arms)| ArmGroup { norm, epsilon: None, arms }));
    for g in &mut groups {
        g.arms.sort_unstable();
    }
    groups
}

/// Which arms a report row aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Setting {
    /// Worst case over every arm of the group.
    Mead,
    /// Only the arms driven by one objective.
    Single(ObjectiveKind),
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Mead => f.write_str("mead"),
            Setting::Single(k) => f.write_str(k.as_str()),
        }
    }
}

/// Detector scores for one natural sample and every arm run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub natural_score: f64,
    /// `(arm index, fooled, score)` for every arm of the group.
    pub arms: Vec<(usize, bool, f64)>,
}

/// Builds verdicts keeping only fooled arms accepted by `include`.
pub fn build_verdicts(samples: &[ScoredSample], include: impl Fn(usize) -> bool) -> Vec<SampleVerdict> {
    samples
        .iter()
        .map(|s| {
            SampleVerdict::new(
                s.natural_score,
                s.arms
                    .iter()
                    .filter(|(arm, fooled, _)| *fooled && include(*arm))
                    .map(|(arm, _, score)| (*arm, *score))
                    .collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SettingResult {
    pub setting: Setting,
    pub auroc: f64,
    pub fpr_at_95_tpr: f64,
    pub n_naturals: usize,
    /// Successful adversarial examples counted in this setting.
    pub n_adversarials: usize,
    /// Naturals with at least one successful arm in this setting.
    pub n_positive_samples: usize,
}

/// Results for one detector on one arm group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub norm: Norm,
    pub epsilon: Option<f64>,
    pub detector: String,
    /// MEAD first, then one row per objective present in the group.
    pub rows: Vec<SettingResult>,
    /// Settings omitted because they had no positives.
    pub skipped: Vec<Setting>,
    /// Successful outcomes per arm index.
    pub successes_per_arm: BTreeMap<usize, usize>,
}

impl GroupReport {
    pub fn row(&self, setting: Setting) -> Option<&SettingResult> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    /// Largest single-armed AUROC in the group.
    pub fn max_single_auroc(&self) -> Option<f64> {
        self.rows.iter().filter(|r| r.setting != Setting::Mead).map(|r| r.auroc).reduce(f64::max)
    }
}

fn summarize(setting: Setting, verdicts: &[SampleVerdict]) -> Result<SettingResult> {
    let points = roc_points(verdicts)?;
    Ok(SettingResult {
        setting,
        auroc: auroc(&points),
        fpr_at_95_tpr: fpr_at_95_tpr(&points),
        n_naturals: verdicts.len(),
        n_adversarials: verdicts.iter().map(|v| v.adversarial.len()).sum(),
        n_positive_samples: verdicts.iter().filter(|v| !v.adversarial.is_empty()).count(),
    })
}

/// Computes the MEAD row and the per-objective single-armed rows from scored samples.
pub fn evaluate_scored_group(
    group: &ArmGroup,
    specs: &[AttackSpec],
    detector: &str,
    samples: &[ScoredSample],
) -> GroupReport {
    let in_group = |arm: usize| group.arms.contains(&arm);
    let mut settings = vec![Setting::Mead];
    for kind in ObjectiveKind::ALL {
        if group.arms.iter().any(|&a| specs[a].objective == Some(kind) && specs[a].family.uses_objective()) {
            settings.push(Setting::Single(kind));
        }
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for setting in settings {
        let verdicts = match setting {
            Setting::Mead => build_verdicts(samples, in_group),
            Setting::Single(kind) => build_verdicts(samples, |a| {
                in_group(a) && specs[a].objective == Some(kind) && specs[a].family.uses_objective()
            }),
        };
        match summarize(setting, &verdicts) {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!(
                    "{} {} {detector} {setting}: {e}",
                    group.norm,
                    group.epsilon.map_or("-".into(), |e| e.to_string())
                );
                skipped.push(setting);
            }
        }
    }
    let mut successes_per_arm = BTreeMap::new();
    for &arm in &group.arms {
        let n = samples.iter().flat_map(|s| &s.arms).filter(|(a, fooled, _)| *a == arm && *fooled).count();
        successes_per_arm.insert(arm, n);
    }
    GroupReport {
        norm: group.norm,
        epsilon: group.epsilon,
        detector: detector.to_string(),
        rows,
        skipped,
        successes_per_arm,
    }
}

/// Samples that are positives under MEAD but discarded by the `kind` single-armed
/// setting, because none of that objective's arms fooled the classifier.
pub fn sifter_differences(
    group: &ArmGroup,
    specs: &[AttackSpec],
    samples: &[ScoredSample],
    kind: ObjectiveKind,
) -> Vec<usize> {
    samples
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let fooled =
                |pred: &dyn Fn(usize) -> bool| s.arms.iter().any(|(a, f, _)| *f && group.arms.contains(a) && pred(*a));
            fooled(&|_| true) && !fooled(&|a| specs[a].objective == Some(kind) && specs[a].family.uses_objective())
        })
        .map(|(i, _)| i)
        .collect()
}

/// Scores attack outcomes and naturals into [`ScoredSample`]s.
///
/// `outcomes[i]` holds every arm's outcome on natural `i`; `score` maps an input to a detector score.
pub fn score_samples(
    naturals: &[Vec<f64>],
    outcomes: &[Vec<AttackOutcome>],
    score: impl Fn(&[f64]) -> Result<f64> + Sync,
) -> Result<Vec<ScoredSample>> {
    use rayon::prelude::*;
    if naturals.len() != outcomes.len() {
        return Err(MeadError::config("one outcome list per natural sample is required"));
    }
    naturals
        .par_iter()
        .zip(outcomes.par_iter())
        .map(|(x, outs)| {
            let natural_score = score(x)?;
            let arms = outs.iter().map(|o| Ok((o.arm, o.fooled, score(&o.x_adv)?))).collect::<Result<Vec<_>>>()?;
            Ok(ScoredSample { natural_score, arms })
        })
        .collect()
}
