//! Adversarial-example detectors. Every detector maps an input to a scalar
//! score where higher means more likely adversarial.

mod fs;
mod kdbu;
mod lid;
mod logistic;
mod magnet;
mod svm;

pub use fs::{bit_depth_squeeze, median_filter, FsDetector, FsSettings, Squeezer};
pub use kdbu::{dropout_uncertainty, scott_bandwidth, KdBuDetector, KdBuSettings, Kde};
pub use lid::{lid_estimate, LidDetector, LidSettings};
pub use logistic::LogisticHead;
pub use magnet::{jensen_shannon, magnet_scores, MagNetDetector, MagNetSettings};
pub use svm::{default_gamma, RbfSvm, SvmSettings};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};
use crate::nn::ModelParams;

const BLOB_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    RbfSvm,
    Lid,
    KdBu,
    Fs,
    MagNet,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] =
        [DetectorKind::RbfSvm, DetectorKind::Lid, DetectorKind::KdBu, DetectorKind::Fs, DetectorKind::MagNet];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::RbfSvm => "rbfsvm",
            DetectorKind::Lid => "lid",
            DetectorKind::KdBu => "kdbu",
            DetectorKind::Fs => "fs",
            DetectorKind::MagNet => "magnet",
        }
    }

    /// Whether fitting needs adversarial positives.
    pub fn supervised(self) -> bool {
        matches!(self, DetectorKind::RbfSvm | DetectorKind::Lid | DetectorKind::KdBu)
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = MeadError;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| MeadError::config(format!("unknown detector '{s}'")))
    }
}

/// Hyperparameters for every detector kind, plus which kinds to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSettings {
    #[serde(default = "all_kinds")]
    pub kinds: Vec<DetectorKind>,
    #[serde(default)]
    pub svm: SvmSettings,
    #[serde(default)]
    pub lid: LidSettings,
    #[serde(default)]
    pub kdbu: KdBuSettings,
    #[serde(default)]
    pub fs: FsSettings,
    #[serde(default)]
    pub magnet: MagNetSettings,
}

fn all_kinds() -> Vec<DetectorKind> {
    DetectorKind::ALL.to_vec()
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            kinds: all_kinds(),
            svm: SvmSettings::default(),
            lid: LidSettings::default(),
            kdbu: KdBuSettings::default(),
            fs: FsSettings::default(),
            magnet: MagNetSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DetectorState {
    RbfSvm(RbfSvm),
    Lid(LidDetector),
    KdBu(KdBuDetector),
    Fs(FsDetector),
    MagNet(MagNetDetector),
}

impl DetectorState {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorState::RbfSvm(_) => DetectorKind::RbfSvm,
            DetectorState::Lid(_) => DetectorKind::Lid,
            DetectorState::KdBu(_) => DetectorKind::KdBu,
            DetectorState::Fs(_) => DetectorKind::Fs,
            DetectorState::MagNet(_) => DetectorKind::MagNet,
        }
    }
}

/// A detector and, for supervised kinds, the attack that produced its training positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    kind: DetectorKind,
    training_attack: Option<String>,
    state: Option<DetectorState>,
}

impl Detector {
    pub fn unfitted(kind: DetectorKind) -> Self {
        Detector { kind, training_attack: None, state: None }
    }

    pub fn fitted(state: DetectorState, training_attack: Option<String>) -> Self {
        Detector { kind: state.kind(), training_attack, state: Some(state) }
    }

    pub fn kind(&self) -> DetectorKind {
        self.kind
    }

    pub fn training_attack(&self) -> Option<&str> {
        self.training_attack.as_deref()
    }

    pub fn state(&self) -> Option<&DetectorState> {
        self.state.as_ref()
    }

    pub fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    /// Score of `x`; higher means more adversarial.
    pub fn score(&self, model: &ModelParams, x: &[f64]) -> Result<f64> {
        let state =
            self.state.as_ref().ok_or_else(|| MeadError::Usage(format!("detector {} scored before fit", self.kind)))?;
        match state {
            DetectorState::RbfSvm(s) => {
                if s.support.first().is_some_and(|v| v.len() != x.len()) {
                    return Err(MeadError::config("svm input has the wrong dimension"));
                }
                Ok(s.decision(x))
            }
            DetectorState::Lid(d) => d.score(model, x),
            DetectorState::KdBu(d) => d.score(model, x),
            DetectorState::Fs(d) => d.score(model, x),
            DetectorState::MagNet(d) => d.score(model, x),
        }
    }

    /// `[kind tag][version][bincode payload]`.
    pub fn to_blob(&self) -> Result<Vec<u8>> {
        let mut out = vec![self.kind.tag(), BLOB_VERSION];
        bincode::serialize_into(&mut out, self).map_err(|e| MeadError::Serialization(e.to_string()))?;
        Ok(out)
    }

    pub fn from_blob(bytes: &[u8], path: &str) -> Result<Self> {
        let format = |offset: u64, reason: String| MeadError::Format { path: path.to_string(), offset, reason };
        let (&tag, rest) = bytes.split_first().ok_or_else(|| format(0, "empty detector blob".into()))?;
        let kind = DetectorKind::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| format(0, format!("unknown detector tag {tag}")))?;
        let (&version, payload) = rest.split_first().ok_or_else(|| format(1, "missing version byte".into()))?;
        if version != BLOB_VERSION {
            return Err(format(1, format!("unsupported detector blob version {version}")));
        }
        let detector: Detector = bincode::deserialize(payload).map_err(|e| format(2, e.to_string()))?;
        if detector.kind != kind || detector.state.as_ref().is_some_and(|s| s.kind() != kind) {
            return Err(format(0, format!("tag says {kind} but payload holds {}", detector.kind)));
        }
        Ok(detector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    #[test]
    fn unfitted_score_is_usage_error() {
        let m = Architecture::new(2, vec![3], 2).initialize(0).unwrap();
        let d = Detector::unfitted(DetectorKind::Lid);
        assert!(matches!(d.score(&m, &[0.0, 0.0]), Err(MeadError::Usage(_))));
    }

    #[test]
    fn blob_round_trip_and_corruption() {
        let m = Architecture::new(2, vec![3], 2).initialize(0).unwrap();
        let nat = vec![vec![0.0, 0.0], vec![0.1, 0.2]];
        let adv = vec![vec![2.0, 2.0], vec![2.1, 1.9]];
        let svm = RbfSvm::fit(&nat, &adv, &SvmSettings::default()).unwrap();
        let d = Detector::fitted(DetectorState::RbfSvm(svm), Some("pgd-linf-ace-0.03125".into()));
        let blob = d.to_blob().unwrap();
        assert_eq!(blob[..2], [DetectorKind::RbfSvm.tag(), BLOB_VERSION]);
        let back = Detector::from_blob(&blob, "d.bin").unwrap();
        assert_eq!(back, d);
        assert_eq!(back.score(&m, &[1.0, 1.0]).unwrap(), d.score(&m, &[1.0, 1.0]).unwrap());

        let mut wrong_tag = blob.clone();
        wrong_tag[0] = DetectorKind::Fs.tag();
        assert!(matches!(Detector::from_blob(&wrong_tag, "d.bin"), Err(MeadError::Format { offset: 0, .. })));
        let mut wrong_version = blob.clone();
        wrong_version[1] = 9;
        assert!(matches!(Detector::from_blob(&wrong_version, "d.bin"), Err(MeadError::Format { offset: 1, .. })));
        assert!(Detector::from_blob(&blob[..blob.len() - 3], "d.bin").is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DetectorKind::ALL {
            assert_eq!(k.as_str().parse::<DetectorKind>().unwrap(), k);
        }
        assert!("nss".parse::<DetectorKind>().is_err());
    }
}
