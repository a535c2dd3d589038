//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"LKGM"
//! u32    format version
//! u64    header length, then that many bytes of UTF-8 JSON (layer specs, seed, metadata)
//! u64    tensor count
//! per tensor:
//!   u32 name length, name bytes
//!   u32 rank, rank × u64 dims
//!   f64 values (product of dims)
//! ```
//!
//! Tensors cover every trainable parameter plus batchnorm running statistics, so a loaded stack
//! reproduces eval-mode outputs bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec};
use super::stack::LayerStack;
use super::tensor::ParamTensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LKGM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub format_version: u32,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    /// Free-form, model-level fields (kind tag, threshold, preprocessing, training log, ...).
    pub metadata: serde_json::Value,
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Serializes `stack` and `metadata` into the model file format.
pub fn encode_stack(stack: &LayerStack, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let header = FileHeader {
        format_version: FORMAT_VERSION,
        layers: stack.specs().to_vec(),
        seed: stack.seed(),
        metadata,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Integrity(format!("header serialization: {e}")))?;
    let tensors = collect_tensors(stack);

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_stack<W: Write>(mut w: W, stack: &LayerStack, metadata: serde_json::Value) -> std::io::Result<()> {
    let bytes = encode_stack(stack, metadata).map_err(std::io::Error::other)?;
    w.write_all(&bytes)
}

fn collect_tensors(stack: &LayerStack) -> Vec<RawTensor> {
    let mut out = Vec::new();
    for (i, layer) in stack.layers().iter().enumerate() {
        for p in layer.params() {
            out.push(RawTensor {
                name: p.name().to_string(),
                shape: p.shape().to_vec(),
                values: p.values().to_vec(),
            });
        }
        if let Layer::Batchnorm {
            running_mean,
            running_var,
            ..
        } = layer
        {
            out.push(RawTensor {
                name: format!("layer{i}.bn.running_mean"),
                shape: vec![running_mean.len()],
                values: running_mean.clone(),
            });
            out.push(RawTensor {
                name: format!("layer{i}.bn.running_var"),
                shape: vec![running_var.len()],
                values: running_var.clone(),
            });
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }
}

/// Parses a model file. Errors carry a description but no path; callers attach one.
pub fn decode_stack(bytes: &[u8]) -> Result<(LayerStack, FileHeader), String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err("not a model file (bad magic)".into());
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let header_len = c.len()?;
    let header: FileHeader = serde_json::from_slice(c.take(header_len)?).map_err(|e| format!("bad header: {e}"))?;
    let count = c.len()?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|e| e.to_string())?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.len()).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or("tensor too large")?;
        let raw = c.take(n.checked_mul(8).ok_or("tensor too large")?)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(RawTensor { name, shape, values });
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }

    let mut stack = LayerStack::new(header.layers.clone(), header.seed).map_err(|e| e.to_string())?;
    let mut by_name: std::collections::HashMap<String, RawTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    for (i, layer) in stack.layers_mut().iter_mut().enumerate() {
        for p in layer.params_mut() {
            fill_param(&mut by_name, p)?;
        }
        if let Layer::Batchnorm {
            running_mean,
            running_var,
            ..
        } = layer
        {
            for (suffix, dst) in [("running_mean", running_mean), ("running_var", running_var)] {
                let name = format!("layer{i}.bn.{suffix}");
                let t = by_name.remove(&name).ok_or_else(|| format!("missing tensor {name}"))?;
                if t.values.len() != dst.len() {
                    return Err(format!("{name} has {} values, expected {}", t.values.len(), dst.len()));
                }
                dst.copy_from_slice(&t.values);
            }
        }
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(format!("unexpected tensor {extra}"));
    }
    Ok((stack, header))
}

pub fn read_stack<R: Read>(mut r: R) -> Result<(LayerStack, FileHeader), String> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
    decode_stack(&bytes)
}

fn fill_param(by_name: &mut std::collections::HashMap<String, RawTensor>, p: &mut ParamTensor) -> Result<(), String> {
    let t = by_name
        .remove(p.name())
        .ok_or_else(|| format!("missing tensor {}", p.name()))?;
    if t.shape != p.shape() {
        return Err(format!("{} has shape {:?}, expected {:?}", t.name, t.shape, p.shape()));
    }
    p.values_mut().copy_from_slice(&t.values);
    p.ensure_grad();
    Ok(())
}
