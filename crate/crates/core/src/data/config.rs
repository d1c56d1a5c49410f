//! Experiment configuration files (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gen_gaussian_dataset, load_idx, GaussianSpec, LabeledDataset};
use crate::attacks::{preset, restrict_epsilons, AttackSpec, InputDomain};
use crate::detectors::DetectorSettings;
use crate::error::{MeadError, Result};
use crate::nn::{Architecture, TrainConfig};

/// Environment variable that replaces the directory of every IDX path.
pub const DATA_DIR_ENV: &str = "MEAD_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default = "default_limit")]
    pub train_limit: usize,
    #[serde(default = "default_limit")]
    pub test_limit: usize,
}

fn default_limit() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Gaussian(GaussianSpec),
    Idx(IdxPaths),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Gaussian(GaussianSpec::default())
    }
}

impl DatasetConfig {
    /// Loads `(train, test)`. IDX paths keep their file names but move to
    /// `data_dir` when one is given.
    pub fn load(&self, data_dir: Option<&Path>) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetConfig::Gaussian(spec) => gen_gaussian_dataset(spec),
            DatasetConfig::Idx(p) => {
                let resolve = |path: &Path| match (data_dir, path.file_name()) {
                    (Some(dir), Some(name)) => dir.join(name),
                    _ => path.to_path_buf(),
                };
                let train = load_idx(&resolve(&p.train_images), &resolve(&p.train_labels), p.train_limit)?;
                let test = load_idx(&resolve(&p.test_images), &resolve(&p.test_labels), p.test_limit)?;
                Ok((train, test))
            }
        }
    }

    /// Expected (input, output) widths, known before any file is read.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            DatasetConfig::Gaussian(_) => (2, 2),
            DatasetConfig::Idx(_) => (784, 10),
        }
    }

    /// Domain used when the attack section leaves it unset.
    pub fn natural_domain(&self) -> InputDomain {
        match self {
            DatasetConfig::Gaussian(_) => InputDomain::Unbounded,
            DatasetConfig::Idx(_) => InputDomain::Unit,
        }
    }
}

/// Hidden layers of the classifier; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![32], dropout: 0.0 }
    }
}

impl ModelConfig {
    pub fn architecture(&self, input: usize, output: usize) -> Result<Architecture> {
        let arch = Architecture { dropout: self.dropout, ..Architecture::new(input, self.hidden.clone(), output) };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    /// Named grids to include.
    #[serde(default)]
    pub presets: Vec<String>,
    /// When set, preset arms are restricted to these budgets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    /// Extra arms listed explicitly.
    #[serde(default)]
    pub specs: Vec<AttackSpec>,
    /// Defaults to the dataset's natural domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<InputDomain>,
    /// Attack only naturals the classifier gets right.
    #[serde(default)]
    pub restrict_to_correct: bool,
    /// Cap on the number of test naturals evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_naturals: Option<usize>,
    /// Budget of the PGD-linf (ACE) attack producing supervised training positives.
    #[serde(default = "default_supervision_epsilon")]
    pub supervision_epsilon: f64,
    /// Cap on the number of training naturals used to fit detectors.
    #[serde(default = "default_fit_naturals")]
    pub max_fit_naturals: usize,
}

fn default_supervision_epsilon() -> f64 {
    0.03125
}
fn default_fit_naturals() -> usize {
    500
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            presets: vec!["paper-linf".into()],
            epsilons: None,
            specs: Vec::new(),
            domain: None,
            restrict_to_correct: false,
            max_naturals: None,
            supervision_epsilon: default_supervision_epsilon(),
            max_fit_naturals: default_fit_naturals(),
        }
    }
}

impl AttackSettings {
    /// Preset arms (restricted if `epsilons` is set) followed by explicit arms.
    pub fn expand(&self) -> Result<Vec<AttackSpec>> {
        let mut specs = Vec::new();
        for name in &self.presets {
            let arms = preset(name)?;
            specs.extend(match &self.epsilons {
                Some(keep) => restrict_epsilons(arms, keep),
                None => arms,
            });
        }
        specs.extend(self.specs.iter().cloned());
        if specs.is_empty() {
            return Err(MeadError::config("attacks: no arms configured (set presets or specs)"));
        }
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attacks: AttackSettings,
    #[serde(default)]
    pub detectors: DetectorSettings,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("mead-out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: default_out_dir(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            attacks: AttackSettings::default(),
            detectors: DetectorSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MeadError::Serialization(e.to_string()))
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let (input, output) = self.dataset.shape();
        self.model.architecture(input, output)?;
        self.attacks.expand()?;
        if self.detectors.kinds.is_empty() {
            return Err(MeadError::config("detectors.kinds is empty"));
        }
        Ok(())
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| MeadError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| MeadError::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        MeadError::Parse(msg) => MeadError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackFamily, Norm};

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), cfg);
    }

    #[test]
    fn explicit_specs_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.attacks.presets.clear();
        cfg.attacks.epsilons = Some(vec![0.5]);
        cfg.attacks.specs = vec![
            AttackSpec::pgd(crate::objectives::ObjectiveKind::Gini, Norm::L2, 0.5).with_seed(3),
            AttackSpec::deepfool(),
        ];
        cfg.dataset = DatasetConfig::Idx(IdxPaths {
            train_images: "a".into(),
            train_labels: "b".into(),
            test_images: "c".into(),
            test_labels: "d".into(),
            train_limit: 10,
            test_limit: 0,
        });
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let text =
            "seed = 1\n[[attacks.specs]]\nfamily = \"pgd\"\nobjective = \"ace\"\nnorm = \"l2\"\nepsilonn = 0.5\n";
        let err = parse_config_str(text).unwrap_err().to_string();
        assert!(err.contains("epsilonn"), "{err}");
        let err = parse_config_str("seed = 1\n[dataset]\nkind = \"gaussian\"\nn_per_class = 3\nmu0 = [1.0, 1.0]\nmu1 = [0.0, 0.0]\nsigma = 1.0\ntrain_fraction = 0.5\nseed = 0\nextra = 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let err = parse_config_str("out_dir = \"x\"\n").unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn preset_expansion() {
        let mut a = AttackSettings { presets: vec!["paper-l1".into()], ..AttackSettings::default() };
        let specs = a.expand().unwrap();
        assert_eq!(specs.len(), 28);
        assert!(specs.iter().all(|s| s.family == AttackFamily::Pgd));
        a.presets = vec!["paper-l9".into()];
        assert!(a.expand().is_err());
    }

    #[test]
    fn invalid_architecture_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.hidden = vec![4, 0];
        assert!(matches!(cfg.validate(), Err(MeadError::Config(_))));
    }

    #[test]
    fn data_dir_replaces_idx_directories() {
        let dir = tempfile::tempdir().unwrap();
        let img = [0u8, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255];
        let lab = [0u8, 0, 8, 1, 0, 0, 0, 1, 7];
        std::fs::write(dir.path().join("img"), img).unwrap();
        std::fs::write(dir.path().join("lab"), lab).unwrap();
        let ds = DatasetConfig::Idx(IdxPaths {
            train_images: "/nowhere/img".into(),
            train_labels: "/nowhere/lab".into(),
            test_images: "/nowhere/img".into(),
            test_labels: "/nowhere/lab".into(),
            train_limit: 5,
            test_limit: 5,
        });
        assert!(ds.load(None).is_err());
        let (train, test) = ds.load(Some(dir.path())).unwrap();
        assert_eq!((train.len(), test.len()), (1, 1));
        assert_eq!(train.labels(), &[7]);
    }
}
