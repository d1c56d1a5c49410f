//! The two-Gaussian case study: a toy classifier attacked with ACE and Gini
//! objectives, and RBF-SVM detectors trained on one objective and tested on the other.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy, sample_seed};
use crate::attacks::{pgd, InputDomain, Norm, PgdParams, DEFAULT_STEPS};
use crate::data::{gen_gaussian_dataset, GaussianSpec};
use crate::detectors::{RbfSvm, SvmSettings};
use crate::error::Result;
use crate::nn::{train_classifier, Architecture, ModelParams, TrainConfig};
use crate::objectives::ObjectiveKind;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub data: GaussianSpec,
    pub hidden: usize,
    pub train: TrainConfig,
    pub ace_epsilon: f64,
    pub gini_epsilon: f64,
    pub steps: usize,
    /// Share of the test naturals (and their attacks) used to fit the detectors.
    pub detector_train_fraction: f64,
    pub svm: SvmSettings,
    pub seed: u64,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig {
            data: GaussianSpec::default(),
            hidden: 16,
            train: TrainConfig::default(),
            ace_epsilon: 1.2,
            gini_epsilon: 5.0,
            steps: DEFAULT_STEPS,
            detector_train_fraction: 0.5,
            svm: SvmSettings::default(),
            seed: 0,
        }
    }
}

/// Detector accuracy on held-out naturals plus their attacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorAccuracy {
    pub on_ace: f64,
    pub on_gini: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub test_accuracy: f64,
    /// Classifier accuracy on the attacked test points.
    pub corrupted_accuracy_ace: f64,
    pub corrupted_accuracy_gini: f64,
    pub ace_trained: DetectorAccuracy,
    pub gini_trained: DetectorAccuracy,
    pub both_trained: DetectorAccuracy,
    pub svm_converged: bool,
}

impl CaseStudyReport {
    pub fn render(&self) -> String {
        let pct = |v: f64| format!("{:5.1}%", 100.0 * v);
        format!(
            "classifier accuracy: natural {}  ace {}  gini {}\n\
             detector accuracy    tested on ace   tested on gini\n\
             trained on ace       {}          {}\n\
             trained on gini      {}          {}\n\
             trained on both      {}          {}\n",
            pct(self.test_accuracy),
            pct(self.corrupted_accuracy_ace),
            pct(self.corrupted_accuracy_gini),
            pct(self.ace_trained.on_ace),
            pct(self.ace_trained.on_gini),
            pct(self.gini_trained.on_ace),
            pct(self.gini_trained.on_gini),
            pct(self.both_trained.on_ace),
            pct(self.both_trained.on_gini),
        )
    }
}

fn attack_all(
    model: &ModelParams,
    inputs: &[Vec<f64>],
    labels: &[usize],
    obj: ObjectiveKind,
    eps: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let params = PgdParams {
                epsilon: eps,
                norm: Norm::Linf,
                steps,
                step_size: 2.5 * eps / steps as f64,
                random_init: true,
                seed: sample_seed(seed, x, 0, 0),
            };
            pgd(model, x, y, obj, &params, InputDomain::Unbounded)
        })
        .collect()
}

fn fraction_correct(model: &ModelParams, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let mut ok = 0;
    for (x, &y) in inputs.iter().zip(labels) {
        if model.predict_label(x)? == y {
            ok += 1;
        }
    }
    Ok(ok as f64 / inputs.len() as f64)
}

fn detector_accuracy(svm: &RbfSvm, naturals: &[Vec<f64>], adversarials: &[Vec<f64>]) -> f64 {
    let correct = naturals.iter().filter(|x| !svm.predict_adversarial(x)).count()
        + adversarials.iter().filter(|x| svm.predict_adversarial(x)).count();
    correct as f64 / (naturals.len() + adversarials.len()) as f64
}

pub fn run_case_study(cfg: &CaseStudyConfig) -> Result<CaseStudyReport> {
    let (train, test) =
        gen_gaussian_dataset(&GaussianSpec { seed: derive_seed(cfg.seed, &[0, cfg.data.seed]), ..cfg.data.clone() })?;
    let arch = Architecture::new(2, vec![cfg.hidden], 2);
    let tc = TrainConfig { seed: derive_seed(cfg.seed, &[1, cfg.train.seed]), ..cfg.train.clone() };
    let model = train_classifier(&train, &arch, &tc)?.params;
    let test_accuracy = accuracy(&model, &test)?;

    let xs = test.inputs();
    let ys = test.labels();
    let ace = attack_all(&model, xs, ys, ObjectiveKind::Ace, cfg.ace_epsilon, cfg.steps, derive_seed(cfg.seed, &[2]))?;
    let gini =
        attack_all(&model, xs, ys, ObjectiveKind::Gini, cfg.gini_epsilon, cfg.steps, derive_seed(cfg.seed, &[3]))?;

    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[4])));
    let cut = ((test.len() as f64 * cfg.detector_train_fraction).round() as usize).clamp(1, test.len() - 1);
    let (fit_idx, eval_idx) = order.split_at(cut);
    let pick = |v: &[Vec<f64>], idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| v[i].clone()).collect() };
    let (nat_fit, nat_eval) = (pick(xs, fit_idx), pick(xs, eval_idx));
    let (ace_fit, ace_eval) = (pick(&ace, fit_idx), pick(&ace, eval_idx));
    let (gini_fit, gini_eval) = (pick(&gini, fit_idx), pick(&gini, eval_idx));

    let both_fit: Vec<Vec<f64>> = ace_fit.iter().chain(&gini_fit).cloned().collect();
    let svm_ace = RbfSvm::fit(&nat_fit, &ace_fit, &cfg.svm)?;
    let svm_gini = RbfSvm::fit(&nat_fit, &gini_fit, &cfg.svm)?;
    let svm_both = RbfSvm::fit(&nat_fit, &both_fit, &cfg.svm)?;
    let rate = |svm: &RbfSvm| DetectorAccuracy {
        on_ace: detector_accuracy(svm, &nat_eval, &ace_eval),
        on_gini: detector_accuracy(svm, &nat_eval, &gini_eval),
    };
    Ok(CaseStudyReport {
        test_accuracy,
        corrupted_accuracy_ace: fraction_correct(&model, &ace, ys)?,
        corrupted_accuracy_gini: fraction_correct(&model, &gini, ys)?,
        ace_trained: rate(&svm_ace),
        gini_trained: rate(&svm_gini),
        both_trained: rate(&svm_both),
        svm_converged: svm_ace.converged && svm_gini.converged && svm_both.converged,
    })
}
