//! End-to-end stages: train, fit detectors, attack and score, evaluate.
//!
//! Each stage can run from the previous stage's files, so the CLI can resume.

mod case_study;

pub use case_study::{run_case_study, CaseStudyConfig, CaseStudyReport, DetectorAccuracy};

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::attacks::{pgd, run_attack, AttackContext, AttackSpec, InputDomain, Norm, PgdParams};
use crate::data::{DatasetConfig, ExperimentConfig, LabeledDataset, ScoreRow};
use crate::detectors::{
    Detector, DetectorKind, DetectorSettings, DetectorState, FsDetector, KdBuDetector, LidDetector, MagNetDetector,
    RbfSvm,
};
use crate::error::{MeadError, Result};
use crate::eval::{evaluate_scored_group, group_arms, sifter_differences, GroupReport, ScoredSample, Setting};
use crate::nn::{train_autoencoder, train_classifier, Architecture, ModelParams, TrainConfig, TrainReport};
use crate::objectives::ObjectiveKind;
use crate::seed::derive_seed;

/// Seed streams, kept apart so adding one stage never shifts another.
const STREAM_TRAIN: u64 = 1;
const STREAM_SUPERVISION: u64 = 2;
const STREAM_ATTACK: u64 = 3;
const STREAM_DETECTOR: u64 = 4;

/// Seed derived from the sample's content, so results do not depend on sample order.
pub fn sample_seed(base: u64, x: &[f64], arm: usize, arm_seed: u64) -> u64 {
    let bits: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
    derive_seed(base, &[derive_seed(0, &bits), arm as u64, arm_seed])
}

pub fn load_datasets(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = cfg.dataset.load(data_dir)?;
    if train.is_empty() || test.is_empty() {
        return Err(MeadError::config("dataset has an empty train or test split"));
    }
    Ok((train, test))
}

pub fn domain_of(cfg: &ExperimentConfig) -> InputDomain {
    cfg.attacks.domain.unwrap_or_else(|| cfg.dataset.natural_domain())
}

/// Trains the classifier described by the config.
pub fn train_model(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<TrainReport> {
    let arch = cfg.model.architecture(train.dim(), train.classes())?;
    let tc = TrainConfig { seed: derive_seed(cfg.seed, &[STREAM_TRAIN, cfg.train.seed]), ..cfg.train.clone() };
    train_classifier(train, &arch, &tc)
}

pub fn accuracy(model: &ModelParams, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0;
    for i in 0..data.len() {
        if model.predict_label(data.input(i))? == data.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Training positives for supervised detectors: PGD-linf ACE at `epsilon`
/// on the fit naturals, keeping fooled outcomes. Falls back to every
/// perturbed point when fewer than two fool the classifier.
pub fn supervision_positives(
    model: &ModelParams,
    fit: &LabeledDataset,
    epsilon: f64,
    domain: InputDomain,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, String)> {
    let spec = AttackSpec::pgd(ObjectiveKind::Ace, Norm::Linf, epsilon);
    let perturbed: Vec<(Vec<f64>, bool)> = (0..fit.len())
        .into_par_iter()
        .map(|i| {
            let x = fit.input(i);
            let y = fit.labels()[i];
            let params = PgdParams {
                epsilon,
                norm: Norm::Linf,
                steps: spec.steps,
                step_size: 2.5 * epsilon / spec.steps as f64,
                random_init: true,
                seed: sample_seed(seed, x, 0, 0),
            };
            let adv = pgd(model, x, y, ObjectiveKind::Ace, &params, domain)?;
            let fooled = model.predict_label(&adv)? != y;
            Ok((adv, fooled))
        })
        .collect::<Result<_>>()?;
    let fooled: Vec<Vec<f64>> = perturbed.iter().filter(|(_, f)| *f).map(|(x, _)| x.clone()).collect();
    if fooled.len() >= 2 {
        Ok((fooled, spec.label()))
    } else {
        log::warn!(
            "only {} of {} supervision attacks fooled the classifier; using all perturbed points",
            fooled.len(),
            perturbed.len()
        );
        Ok((perturbed.into_iter().map(|(x, _)| x).collect(), format!("{} (unsifted)", spec.label())))
    }
}

/// Fits every configured detector on (a prefix of) the training split.
pub fn fit_detectors(cfg: &ExperimentConfig, model: &ModelParams, train: &LabeledDataset) -> Result<Vec<Detector>> {
    let settings: &DetectorSettings = &cfg.detectors;
    let domain = domain_of(cfg);
    let n_fit = train.len().min(cfg.attacks.max_fit_naturals.max(1));
    let fit = train.subset(&(0..n_fit).collect::<Vec<_>>());
    let naturals = fit.inputs();
    let eps = cfg.attacks.supervision_epsilon;
    let needs_positives = settings.kinds.iter().any(|k| k.supervised());
    let (positives, manifest) = if needs_positives {
        let (p, m) = supervision_positives(model, &fit, eps, domain, derive_seed(cfg.seed, &[STREAM_SUPERVISION]))?;
        (p, Some(m))
    } else {
        (Vec::new(), None)
    };
    let mut detectors = Vec::new();
    for &kind in &settings.kinds {
        let seed = derive_seed(cfg.seed, &[STREAM_DETECTOR, kind as u64]);
        let detector = match kind {
            DetectorKind::RbfSvm => Detector::fitted(
                DetectorState::RbfSvm(RbfSvm::fit(naturals, &positives, &settings.svm)?),
                manifest.clone(),
            ),
            DetectorKind::Lid => Detector::fitted(
                DetectorState::Lid(LidDetector::fit(
                    model,
                    naturals,
                    &positives,
                    &settings.lid,
                    settings.lid.noise_sigma.unwrap_or(eps),
                    domain,
                    seed,
                )?),
                manifest.clone(),
            ),
            DetectorKind::KdBu => Detector::fitted(
                DetectorState::KdBu(KdBuDetector::fit(
                    model,
                    naturals,
                    fit.labels(),
                    &positives,
                    &settings.kdbu,
                    seed,
                )?),
                manifest.clone(),
            ),
            DetectorKind::Fs => {
                Detector::fitted(DetectorState::Fs(FsDetector::new(&settings.fs, train.shape())?), None)
            }
            DetectorKind::MagNet => {
                let m = &settings.magnet;
                let arch = Architecture::new(train.dim(), m.hidden.clone(), train.dim());
                let tc =
                    TrainConfig { epochs: m.epochs, learning_rate: m.learning_rate, seed, ..TrainConfig::default() };
                let ae = train_autoencoder(train.inputs(), &arch, &tc)?.params;
                Detector::fitted(DetectorState::MagNet(MagNetDetector::fit(model, ae, naturals, m.temperature)?), None)
            }
        };
        log::info!("fitted detector {kind}");
        detectors.push(detector);
    }
    Ok(detectors)
}

/// Indices of the test naturals to evaluate, honouring `restrict_to_correct` and `max_naturals`.
pub fn evaluation_indices(cfg: &ExperimentConfig, model: &ModelParams, test: &LabeledDataset) -> Result<Vec<usize>> {
    let mut idx = Vec::new();
    for i in 0..test.len() {
        if cfg.attacks.max_naturals.is_some_and(|m| idx.len() >= m) {
            break;
        }
        if cfg.attacks.restrict_to_correct && model.predict_label(test.input(i))? != test.labels()[i] {
            continue;
        }
        idx.push(i);
    }
    Ok(idx)
}

pub fn natural_id(i: usize) -> String {
    format!("n{i}")
}

pub fn adversarial_id(i: usize, arm: usize) -> String {
    format!("a{i}-{arm}")
}

enum SampleId {
    Natural(usize),
    Adversarial(usize, usize),
}

fn parse_sample_id(id: &str) -> Result<SampleId> {
    let bad = || MeadError::Parse(format!("malformed sample id '{id}'"));
    if let Some(rest) = id.strip_prefix('n') {
        return rest.parse().map(SampleId::Natural).map_err(|_| bad());
    }
    let rest = id.strip_prefix('a').ok_or_else(bad)?;
    let (i, arm) = rest.split_once('-').ok_or_else(bad)?;
    Ok(SampleId::Adversarial(i.parse().map_err(|_| bad())?, arm.parse().map_err(|_| bad())?))
}

/// Runs every arm on every selected natural, sifts, and scores naturals and
/// successful adversarials with every detector. Rows come out in a fixed
/// order: by sample, then natural before its arms, then detector.
pub fn attack_and_score(
    cfg: &ExperimentConfig,
    model: &ModelParams,
    detectors: &[Detector],
    test: &LabeledDataset,
    indices: &[usize],
    specs: &[AttackSpec],
) -> Result<Vec<ScoreRow>> {
    let ctx = AttackContext { model, domain: domain_of(cfg), shape: test.shape() };
    let base = derive_seed(cfg.seed, &[STREAM_ATTACK]);
    let per_sample: Vec<Vec<ScoreRow>> = indices
        .par_iter()
        .map(|&i| {
            let x = test.input(i);
            let y = test.labels()[i];
            let mut rows = Vec::new();
            for d in detectors {
                rows.push(ScoreRow {
                    sample_id: natural_id(i),
                    detector: d.kind().to_string(),
                    score: d.score(model, x)?,
                });
            }
            for (arm, spec) in specs.iter().enumerate() {
                let seed = sample_seed(base, x, arm, spec.seed);
                let outcome = run_attack(&ctx, spec, arm, x, y, seed)?;
                if !outcome.fooled {
                    continue;
                }
                for d in detectors {
                    rows.push(ScoreRow {
                        sample_id: adversarial_id(i, arm),
                        detector: d.kind().to_string(),
                        score: d.score(model, &outcome.x_adv)?,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

/// Per-detector scored samples rebuilt from score rows. Only fooled arms
/// appear in the rows, so every listed arm counts as successful.
pub fn scored_samples_from_rows(rows: &[ScoreRow]) -> Result<BTreeMap<String, Vec<(usize, ScoredSample)>>> {
    let mut by_det: BTreeMap<String, BTreeMap<usize, ScoredSample>> = BTreeMap::new();
    let mut seen_natural: BTreeMap<String, std::collections::BTreeSet<usize>> = BTreeMap::new();
    for r in rows {
        let entry = by_det.entry(r.detector.clone()).or_default();
        match parse_sample_id(&r.sample_id)? {
            SampleId::Natural(i) => {
                let s = entry.entry(i).or_insert_with(|| ScoredSample { natural_score: f64::NAN, arms: Vec::new() });
                s.natural_score = r.score;
                seen_natural.entry(r.detector.clone()).or_default().insert(i);
            }
            SampleId::Adversarial(i, arm) => {
                let s = entry.entry(i).or_insert_with(|| ScoredSample { natural_score: f64::NAN, arms: Vec::new() });
                s.arms.push((arm, true, r.score));
            }
        }
    }
    let mut out = BTreeMap::new();
    for (det, samples) in by_det {
        let naturals = seen_natural.get(&det);
        if let Some(&i) = samples.keys().find(|i| !naturals.is_some_and(|n| n.contains(i))) {
            return Err(MeadError::Parse(format!("scores for {det}: sample {i} has no natural score")));
        }
        let mut list: Vec<(usize, ScoredSample)> = samples.into_iter().collect();
        for (_, s) in &mut list {
            s.arms.sort_by_key(|(a, _, _)| *a);
        }
        out.insert(det, list);
    }
    Ok(out)
}

/// A group in which the worst-case AUROC beats every single-armed AUROC,
/// with the samples whose single-armed sifting differs from the worst-case one.
#[derive(Debug, Clone, PartialEq)]
pub struct MeadExcess {
    pub detector: String,
    pub group: String,
    pub mead_auroc: f64,
    pub max_single_auroc: f64,
    /// `(objective, sample ids discarded by that objective's sifter but kept by the worst case)`.
    pub sifter_differences: Vec<(ObjectiveKind, Vec<usize>)>,
}

impl MeadExcess {
    pub fn explained(&self) -> bool {
        self.sifter_differences.iter().any(|(_, ids)| !ids.is_empty())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub reports: Vec<GroupReport>,
    pub mead_excesses: Vec<MeadExcess>,
}

/// Evaluates every arm group for every detector found in `rows`.
pub fn evaluate_rows(specs: &[AttackSpec], detector_order: &[String], rows: &[ScoreRow]) -> Result<Evaluation> {
    let samples = scored_samples_from_rows(rows)?;
    let groups = group_arms(specs);
    let mut eval = Evaluation::default();
    for group in &groups {
        for det in detector_order {
            let Some(list) = samples.get(det) else {
                return Err(MeadError::Evaluation(format!("no scores for detector {det}")));
            };
            let ids: Vec<usize> = list.iter().map(|(i, _)| *i).collect();
            let scored: Vec<ScoredSample> = list.iter().map(|(_, s)| s.clone()).collect();
            let report = evaluate_scored_group(group, specs, det, &scored);
            for s in &report.skipped {
                log::warn!("{} {det} {s}: no successful adversarial examples, row omitted", group.label());
            }
            if let (Some(mead), Some(max_single)) = (report.row(Setting::Mead), report.max_single_auroc()) {
                if mead.auroc > max_single {
                    let diffs: Vec<(ObjectiveKind, Vec<usize>)> = ObjectiveKind::ALL
                        .into_iter()
                        .filter(|k| report.row(Setting::Single(*k)).is_some())
                        .map(|k| {
                            (k, sifter_differences(group, specs, &scored, k).into_iter().map(|j| ids[j]).collect())
                        })
                        .collect();
                    let case = MeadExcess {
                        detector: det.clone(),
                        group: group.label(),
                        mead_auroc: mead.auroc,
                        max_single_auroc: max_single,
                        sifter_differences: diffs,
                    };
                    for (k, samples) in &case.sifter_differences {
                        for s in samples {
                            log::info!(
                                "{} {det}: sample {s} kept by the worst case, discarded by the {k} sifter",
                                group.label()
                            );
                        }
                    }
                    eval.mead_excesses.push(case);
                }
            }
            eval.reports.push(report);
        }
    }
    Ok(eval)
}

/// Human-readable table of report rows.
pub fn summary_table(reports: &[GroupReport]) -> String {
    format_report_table(&crate::data::report_records(reports))
}

/// Human-readable table of report records (as read back from CSV).
pub fn format_report_table(records: &[[String; 8]]) -> String {
    let mut out = format!(
        "{:<5} {:>8} {:<7} {:<7} {:>7} {:>7} {:>6} {:>7}\n",
        "norm", "eps", "setting", "det", "auroc", "fpr95", "nat", "adv"
    );
    for rec in records {
        let num = |s: &str| s.parse::<f64>().map_or_else(|_| s.to_string(), |v| format!("{v:.3}"));
        out.push_str(&format!(
            "{:<5} {:>8} {:<7} {:<7} {:>7} {:>7} {:>6} {:>7}\n",
            rec[0],
            if rec[1].is_empty() { "-".to_string() } else { rec[1].clone() },
            rec[2],
            rec[3],
            num(&rec[4]),
            num(&rec[5]),
            rec[6],
            rec[7]
        ));
    }
    out
}

/// Everything `run_experiment` produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub model: ModelParams,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub detectors: Vec<Detector>,
    pub scores: Vec<ScoreRow>,
    pub evaluation: Evaluation,
}

/// All stages in memory.
pub fn run_experiment(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<ExperimentOutput> {
    let (train, test) = load_datasets(cfg, data_dir)?;
    let report = train_model(cfg, &train)?;
    let model = report.params;
    let test_accuracy = accuracy(&model, &test)?;
    let detectors = fit_detectors(cfg, &model, &train)?;
    let specs = cfg.attacks.expand()?;
    let indices = evaluation_indices(cfg, &model, &test)?;
    let scores = attack_and_score(cfg, &model, &detectors, &test, &indices, &specs)?;
    let names: Vec<String> = detectors.iter().map(|d| d.kind().to_string()).collect();
    let evaluation = evaluate_rows(&specs, &names, &scores)?;
    Ok(ExperimentOutput {
        model,
        train_accuracy: report.train_accuracy.unwrap_or(f64::NAN),
        test_accuracy,
        detectors,
        scores,
        evaluation,
    })
}

/// Whether the dataset in the config is synthetic.
pub fn is_synthetic(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.dataset, DatasetConfig::Gaussian(_))
}
