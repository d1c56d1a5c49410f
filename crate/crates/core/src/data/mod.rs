//! Datasets, configuration files and report persistence.

mod config;
mod gaussian;
mod idx;
mod report;

pub use config::{
    parse_config, parse_config_str, AttackSettings, DatasetConfig, ExperimentConfig, IdxPaths, ModelConfig,
    DATA_DIR_ENV,
};
pub use gaussian::{gen_gaussian_dataset, GaussianSpec};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use report::{
    read_report_csv, read_scores_csv, report_records, write_report_csv, write_scores_csv, ScoreRow, REPORT_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::error::{MeadError, Result};

/// Height and width of a single-channel image stored row-major in a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Inputs with integer class labels.
///
/// May be empty (e.g. an IDX load with `limit = 0`); consumers that need
/// samples check for that themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
    shape: Option<ImageShape>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(MeadError::config(format!("{} inputs but {} labels", inputs.len(), labels.len())));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(MeadError::config("inputs have inconsistent dimensions"));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(MeadError::config(format!("label {bad} out of range for {classes} classes")));
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MeadError::config("dataset contains non-finite values"));
        }
        Ok(LabeledDataset { inputs, labels, classes, shape: None })
    }

    pub fn with_shape(mut self, shape: ImageShape) -> Result<Self> {
        if !self.inputs.is_empty() && shape.pixels() != self.dim() {
            return Err(MeadError::config(format!(
                "image shape {}x{} does not match dimension {}",
                shape.height,
                shape.width,
                self.dim()
            )));
        }
        self.shape = Some(shape);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> Option<ImageShape> {
        self.shape
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            shape: self.shape,
        }
    }

    pub fn truncate(&mut self, limit: usize) {
        self.inputs.truncate(limit);
        self.labels.truncate(limit);
    }
}
