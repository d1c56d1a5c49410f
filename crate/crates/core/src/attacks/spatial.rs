//! Grid search over small rotations and translations of an image.

use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{MeadError, Result};
use crate::nn::ModelParams;
use crate::objectives::ace_loss;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialParams {
    pub max_rotation_deg: f64,
    pub max_translation_px: i32,
    /// Number of evenly spaced rotation angles in `[-max, max]`; zero is always added.
    pub rotation_steps: usize,
}

/// Rotates by `angle_deg` about the image centre, then shifts by `(dx, dy)` pixels.
/// Bilinear sampling, zero outside the image.
pub fn transform_image(x: &[f64], shape: ImageShape, angle_deg: f64, dx: i32, dy: i32) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let pixel = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
            0.0
        } else {
            x[r as usize * w + c as usize]
        }
    };
    let mut out = vec![0.0; x.len()];
    for r in 0..h {
        for c in 0..w {
            // inverse map: undo the shift, then rotate by -angle
            let u = c as f64 - dx as f64 - cx;
            let v = r as f64 - dy as f64 - cy;
            let src_c = cos * u + sin * v + cx;
            let src_r = -sin * u + cos * v + cy;
            let (r0, c0) = (src_r.floor(), src_c.floor());
            let (fr, fc) = (src_r - r0, src_c - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            out[r * w + c] = (1.0 - fr) * (1.0 - fc) * pixel(r0, c0)
                + (1.0 - fr) * fc * pixel(r0, c0 + 1)
                + fr * (1.0 - fc) * pixel(r0 + 1, c0)
                + fr * fc * pixel(r0 + 1, c0 + 1);
        }
    }
    out
}

/// Candidate transforms in search order: smallest rotation, then smallest shift first.
fn candidate_grid(params: &SpatialParams) -> Vec<(f64, i32, i32)> {
    let mut angles: Vec<f64> = match params.rotation_steps {
        0 | 1 => vec![0.0],
        n => (0..n)
            .map(|i| -params.max_rotation_deg + 2.0 * params.max_rotation_deg * i as f64 / (n - 1) as f64)
            .collect(),
    };
    if !angles.contains(&0.0) {
        angles.push(0.0);
    }
    let t = params.max_translation_px.max(0);
    let mut grid: Vec<(f64, i32, i32)> =
        angles.iter().flat_map(|&a| (-t..=t).flat_map(move |dx| (-t..=t).map(move |dy| (a, dx, dy)))).collect();
    grid.sort_by(|a, b| {
        a.0.abs()
            .total_cmp(&b.0.abs())
            .then((a.1.abs() + a.2.abs()).cmp(&(b.1.abs() + b.2.abs())))
            .then(a.0.total_cmp(&b.0))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    grid
}

/// Returns the first transform in the grid that changes the label away from
/// `y`; if none does, the transform with the largest cross-entropy on `y`.
pub fn spatial_transform_attack(
    model: &ModelParams,
    x: &[f64],
    shape: ImageShape,
    y: usize,
    params: &SpatialParams,
) -> Result<Vec<f64>> {
    if shape.pixels() != x.len() {
        return Err(MeadError::config(format!(
            "image shape {}x{} does not match input length {}",
            shape.height,
            shape.width,
            x.len()
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (angle, dx, dy) in candidate_grid(params) {
        let candidate = transform_image(x, shape, angle, dx, dy);
        let pred = model.forward(&candidate)?;
        if pred.label() != y {
            return Ok(candidate);
        }
        let loss = ace_loss(&pred.probs, y);
        if best.as_ref().is_none_or(|(l, _)| loss > *l) {
            best = Some((loss, candidate));
        }
    }
    Ok(best.map(|(_, x)| x).unwrap_or_else(|| x.to_vec()))
}
