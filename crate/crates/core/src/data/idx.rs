//! Big-endian IDX files (the MNIST distribution format).

use std::path::Path;

use super::{ImageShape, LabeledDataset};
use crate::error::{MeadError, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &str, offset: usize, reason: impl Into<String>) -> MeadError {
    MeadError::Format { path: path.to_string(), offset: offset as u64, reason: reason.into() }
}

fn be_u32(bytes: &[u8], offset: usize, path: &str, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, offset, format!("truncated header while reading {what}")))
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &str) -> Result<()> {
    let actual = bytes.len() - header;
    if actual < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: header declares {expected} bytes, found {actual}"),
        ));
    }
    if actual > expected {
        return Err(format_err(
            path,
            header + expected,
            format!("{} bytes beyond the declared payload", actual - expected),
        ));
    }
    Ok(())
}

/// Parses an image file into pixels scaled to `[0, 1]`, keeping at most `limit` images.
pub fn parse_idx_images(bytes: &[u8], path: &str, limit: usize) -> Result<(Vec<Vec<f64>>, ImageShape)> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(path, 0, format!("expected image magic 0x{IMAGE_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let count = be_u32(bytes, 4, path, "image count")? as usize;
    let height = be_u32(bytes, 8, path, "row count")? as usize;
    let width = be_u32(bytes, 12, path, "column count")? as usize;
    let pixels = height * width;
    check_payload(bytes, 16, count * pixels, path)?;
    let images = bytes[16..]
        .chunks_exact(pixels.max(1))
        .take(count.min(limit))
        .map(|img| img.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    Ok((images, ImageShape { height, width }))
}

pub fn parse_idx_labels(bytes: &[u8], path: &str, limit: usize) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(format_err(path, 0, format!("expected label magic 0x{LABEL_MAGIC:08x}, found 0x{magic:08x}")));
    }
    let count = be_u32(bytes, 4, path, "label count")? as usize;
    check_payload(bytes, 8, count, path)?;
    Ok(bytes[8..].iter().take(count.min(limit)).map(|&b| b as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| MeadError::io(path, e))
}

/// Loads an image/label file pair; class count is one more than the largest label seen (at least 10).
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<LabeledDataset> {
    let image_name = images_path.display().to_string();
    let label_name = labels_path.display().to_string();
    let (images, shape) = parse_idx_images(&read(images_path)?, &image_name, limit)?;
    let labels = parse_idx_labels(&read(labels_path)?, &label_name, limit)?;
    if images.len() != labels.len() {
        return Err(MeadError::config(format!(
            "{} holds {} images but {} holds {} labels",
            image_name,
            images.len(),
            label_name,
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(10, |m| (m + 1).max(10));
    LabeledDataset::new(images, labels, classes)?.with_shape(shape)
}
