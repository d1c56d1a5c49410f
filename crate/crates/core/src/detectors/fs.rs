//! Feature squeezing: prediction change under bit-depth reduction and median smoothing.

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{MeadError, Result};
use crate::nn::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsSettings {
    /// Defaults to 1..=7 for images and 4 for flat inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_depths: Option<Vec<u32>>,
    /// Side of the median window; 0 disables smoothing. Only used for images.
    #[serde(default = "default_window")]
    pub median_window: usize,
}

fn default_window() -> usize {
    2
}

impl Default for FsSettings {
    fn default() -> Self {
        FsSettings { bit_depths: None, median_window: default_window() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Squeezer {
    BitDepth(u32),
    Median(usize),
}

/// Rounds every coordinate to the grid `k / (2^bits - 1)`, halves rounding up.
pub fn bit_depth_squeeze(x: &[f64], bits: u32) -> Vec<f64> {
    let levels = ((1u64 << bits.min(52)) - 1) as f64;
    x.iter().map(|v| (v * levels + 0.5).floor() / levels).collect()
}

/// Median over the `window x window` block anchored at each pixel (extending
/// down and right), reflecting at the border; even windows take the upper median.
pub fn median_filter(x: &[f64], shape: ImageShape, window: usize) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let reflect = |i: usize, n: usize| -> usize {
        let period = 2 * n;
        let m = i % period;
        if m < n {
            m
        } else {
            period - 1 - m
        }
    };
    let mut out = vec![0.0; x.len()];
    let mut buf = Vec::with_capacity(window * window);
    for r in 0..h {
        for c in 0..w {
            buf.clear();
            for dr in 0..window {
                for dc in 0..window {
                    buf.push(x[reflect(r + dr, h) * w + reflect(c + dc, w)]);
                }
            }
            buf.sort_unstable_by(f64::total_cmp);
            out[r * w + c] = buf[buf.len() / 2];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsDetector {
    pub squeezers: Vec<Squeezer>,
    pub shape: Option<ImageShape>,
}

impl FsDetector {
    pub fn new(settings: &FsSettings, shape: Option<ImageShape>) -> Result<Self> {
        let depths =
            settings.bit_depths.clone().unwrap_or_else(|| if shape.is_some() { (1..=7).collect() } else { vec![4] });
        if depths.iter().any(|&b| b == 0 || b > 52) {
            return Err(MeadError::config("bit depths must lie in 1..=52"));
        }
        let mut squeezers: Vec<Squeezer> = depths.into_iter().map(Squeezer::BitDepth).collect();
        if shape.is_some() && settings.median_window > 0 {
            squeezers.push(Squeezer::Median(settings.median_window));
        }
        if squeezers.is_empty() {
            return Err(MeadError::config("feature squeezing needs at least one squeezer"));
        }
        Ok(FsDetector { squeezers, shape })
    }

    pub fn squeeze(&self, x: &[f64], squeezer: Squeezer) -> Vec<f64> {
        match (squeezer, self.shape) {
            (Squeezer::BitDepth(b), _) => bit_depth_squeeze(x, b),
            (Squeezer::Median(win), Some(shape)) if shape.pixels() == x.len() => median_filter(x, shape, win),
            (Squeezer::Median(_), _) => x.to_vec(),
        }
    }

    /// Largest L1 distance between the prediction on `x` and on a squeezed copy.
    pub fn score(&self, model: &ModelParams, x: &[f64]) -> Result<f64> {
        let base = model.forward(x)?.probs;
        let mut best: f64 = 0.0;
        for &s in &self.squeezers {
            let p = model.forward(&self.squeeze(x, s))?.probs;
            best = best.max(base.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum());
        }
        Ok(best)
    }
}
