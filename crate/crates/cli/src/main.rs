//! `mead`: train, attack, evaluate and report, plus the case-study reproducer.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mead_core::data::{
    parse_config, read_report_csv, read_scores_csv, write_report_csv, write_scores_csv, ExperimentConfig, DATA_DIR_ENV,
};
use mead_core::detectors::Detector;
use mead_core::nn::{load_checkpoint, save_checkpoint, ModelParams};
use mead_core::pipeline::{self, CaseStudyConfig};
use mead_core::{MeadError, Result};

const MODEL_FILE: &str = "model.bin";
const SCORES_FILE: &str = "scores.csv";
const REPORT_FILE: &str = "report.csv";
const DETECTOR_DIR: &str = "detectors";

#[derive(Parser)]
#[command(name = "mead", version, about = "Worst-case multi-armed evaluation of adversarial example detectors")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier and write a checkpoint.
    Train(StageArgs),
    /// Fit detectors, run every attack arm and write per-sample scores.
    Attack(StageArgs),
    /// Compute the report from scores, running earlier stages if their files are missing.
    Evaluate(StageArgs),
    /// Reproduce the two-Gaussian case study.
    CaseStudy(CaseStudyArgs),
    /// Print an existing report as a table.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct StageArgs {
    /// Experiment config (TOML); built-in synthetic defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Replaces the configured attack presets with this one.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CaseStudyArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the results as TOML into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MeadError + '_ {
    move |source| MeadError::Io { path: path.to_path_buf(), source }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => parse_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn resolve(args: &StageArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.preset {
        cfg.attacks.presets = vec![p.clone()];
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))
}

fn run_train(cfg: &ExperimentConfig) -> Result<ModelParams> {
    ensure_out(cfg)?;
    let (train, test) = pipeline::load_datasets(cfg, data_dir().as_deref())?;
    let report = pipeline::train_model(cfg, &train)?;
    let path = cfg.out_dir.join(MODEL_FILE);
    save_checkpoint(&report.params, &path)?;
    let test_acc = pipeline::accuracy(&report.params, &test)?;
    println!(
        "train_accuracy={:.4} test_accuracy={:.4} final_loss={:.6} checkpoint={}",
        report.train_accuracy.unwrap_or(f64::NAN),
        test_acc,
        report.final_loss,
        path.display()
    );
    Ok(report.params)
}

fn model_or_train(cfg: &ExperimentConfig) -> Result<ModelParams> {
    let path = cfg.out_dir.join(MODEL_FILE);
    if path.exists() {
        load_checkpoint(&path)
    } else {
        log::info!("{} missing, training first", path.display());
        run_train(cfg)
    }
}

fn run_attack(cfg: &ExperimentConfig) -> Result<()> {
    ensure_out(cfg)?;
    let path = cfg.out_dir.join(MODEL_FILE);
    if !path.exists() {
        return Err(MeadError::Usage(format!("{} not found; run `mead train` first", path.display())));
    }
    let model = load_checkpoint(&path)?;
    attack_stage(cfg, &model)
}

fn attack_stage(cfg: &ExperimentConfig, model: &ModelParams) -> Result<()> {
    let (train, test) = pipeline::load_datasets(cfg, data_dir().as_deref())?;
    let detectors = pipeline::fit_detectors(cfg, model, &train)?;
    let det_dir = cfg.out_dir.join(DETECTOR_DIR);
    std::fs::create_dir_all(&det_dir).map_err(io_err(&det_dir))?;
    for d in &detectors {
        let p = det_dir.join(format!("{}.bin", d.kind()));
        std::fs::write(&p, d.to_blob()?).map_err(io_err(&p))?;
    }
    let specs = cfg.attacks.expand()?;
    let indices = pipeline::evaluation_indices(cfg, model, &test)?;
    log::info!("{} arms on {} naturals", specs.len(), indices.len());
    let rows = pipeline::attack_and_score(cfg, model, &detectors, &test, &indices, &specs)?;
    let p = cfg.out_dir.join(SCORES_FILE);
    write_scores_csv(&rows, &p)?;
    println!("scores={} rows={}", p.display(), rows.len());
    Ok(())
}

fn run_evaluate(cfg: &ExperimentConfig) -> Result<()> {
    ensure_out(cfg)?;
    let scores = cfg.out_dir.join(SCORES_FILE);
    if !scores.exists() {
        let model = model_or_train(cfg)?;
        attack_stage(cfg, &model)?;
    }
    let rows = read_scores_csv(&scores)?;
    let specs = cfg.attacks.expand()?;
    let names: Vec<String> = cfg.detectors.kinds.iter().map(|k| k.to_string()).collect();
    let eval = pipeline::evaluate_rows(&specs, &names, &rows)?;
    for case in &eval.mead_excesses {
        log::warn!(
            "{} {}: worst-case AUROC {:.4} above best single-armed {:.4} ({})",
            case.group,
            case.detector,
            case.mead_auroc,
            case.max_single_auroc,
            if case.explained() { "sifter sets differ" } else { "no sifter difference found" }
        );
    }
    let p = cfg.out_dir.join(REPORT_FILE);
    write_report_csv(&eval.reports, &p)?;
    print!("{}", pipeline::summary_table(&eval.reports));
    println!("report={}", p.display());
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let out = match &args.out {
        Some(o) => o.clone(),
        None => load_config(args.config.as_deref())?.out_dir,
    };
    let records = read_report_csv(&out.join(REPORT_FILE))?;
    print!("{}", pipeline::format_report_table(&records));
    let det_dir = out.join(DETECTOR_DIR);
    if let Ok(entries) = std::fs::read_dir(&det_dir) {
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            let bytes = std::fs::read(&p).map_err(io_err(&p))?;
            let d = Detector::from_blob(&bytes, &p.display().to_string())?;
            println!("detector {} trained on {}", d.kind(), d.training_attack().unwrap_or("naturals only"));
        }
    }
    Ok(())
}

fn run_case_study(args: &CaseStudyArgs) -> Result<()> {
    let mut cfg = CaseStudyConfig::default();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let report = pipeline::run_case_study(&cfg)?;
    print!("{}", report.render());
    if !report.svm_converged {
        log::warn!("an svm hit its iteration cap");
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        let p = out.join("case_study.toml");
        let text = toml::to_string(&report).map_err(|e| MeadError::Serialization(e.to_string()))?;
        std::fs::write(&p, text).map_err(io_err(&p))?;
    }
    Ok(())
}

fn with_jobs(jobs: usize, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| MeadError::Usage(e.to_string()))?;
    pool.install(f)
}

fn exit_code(e: &MeadError) -> u8 {
    match e {
        MeadError::Config(_) | MeadError::Parse(_) | MeadError::Usage(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    let result = match &cli.command {
        Command::Train(a) => resolve(a).and_then(|cfg| with_jobs(a.jobs, || run_train(&cfg).map(|_| ()))),
        Command::Attack(a) => resolve(a).and_then(|cfg| with_jobs(a.jobs, || run_attack(&cfg))),
        Command::Evaluate(a) => resolve(a).and_then(|cfg| with_jobs(a.jobs, || run_evaluate(&cfg))),
        Command::CaseStudy(a) => run_case_study(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
