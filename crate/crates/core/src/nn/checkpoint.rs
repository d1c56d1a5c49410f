//! Flat binary checkpoints.
//!
//! Layout: the 8 magic bytes `MEADMDL1`, the layer count as `u32` LE, then
//! `(outputs, inputs)` per layer as `u32` LE, then per layer the row-major
//! weights followed by the biases as `f64` LE. Hidden layers are ReLU and the
//! output layer is linear; dropout rates are not stored.

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, Layer, ModelParams};
use crate::error::{MeadError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MEADMDL1";

pub fn write_checkpoint(params: &ModelParams, mut out: impl Write) -> std::io::Result<()> {
    let layers = params.layers();
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        out.write_all(&(layer.outputs as u32).to_le_bytes())?;
        out.write_all(&(layer.inputs as u32).to_le_bytes())?;
    }
    for layer in layers {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a str,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(MeadError::Format {
                path: self.path.to_string(),
                offset: self.offset as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses checkpoint bytes; `path` only labels error messages.
pub fn read_checkpoint(bytes: &[u8], path: &str) -> Result<ModelParams> {
    let mut cur = Cursor { bytes, offset: 0, path };
    if cur.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(MeadError::Format {
            path: path.to_string(),
            offset: 0,
            reason: "bad magic, expected MEADMDL1".into(),
        });
    }
    let count = cur.u32("layer count")? as usize;
    if count == 0 {
        return Err(MeadError::Format { path: path.to_string(), offset: 8, reason: "zero layers".into() });
    }
    let mut dims = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let outputs = cur.u32("layer dims")? as usize;
        let inputs = cur.u32("layer dims")? as usize;
        dims.push((outputs, inputs));
    }
    let mut layers = Vec::with_capacity(count);
    for (i, &(outputs, inputs)) in dims.iter().enumerate() {
        let weights = (0..outputs * inputs).map(|_| cur.f64("weights")).collect::<Result<Vec<_>>>()?;
        let bias = (0..outputs).map(|_| cur.f64("bias")).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            inputs,
            outputs,
            weights,
            bias,
            activation: if i + 1 < count { Activation::Relu } else { Activation::Identity },
            dropout: 0.0,
        });
    }
    if cur.offset != bytes.len() {
        return Err(MeadError::Format {
            path: path.to_string(),
            offset: cur.offset as u64,
            reason: format!("{} trailing bytes", bytes.len() - cur.offset),
        });
    }
    ModelParams::new(layers)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let n = params.layers().len();
    let standard = params
        .layers()
        .iter()
        .enumerate()
        .all(|(i, l)| l.activation == if i + 1 < n { Activation::Relu } else { Activation::Identity });
    if !standard {
        return Err(MeadError::config("checkpoints store ReLU-hidden / linear-output networks only"));
    }
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes).expect("writing to a Vec cannot fail");
    std::fs::write(path, bytes).map_err(|e| MeadError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| MeadError::io(path, e))?;
    read_checkpoint(&bytes, &path.display().to_string())
}
