//! Checkpoint container.
//!
//! Layout: an 8-byte little-endian manifest length, the JSON manifest, then
//! the raw little-endian `f32` data of every array back to back. The manifest
//! records each array's name, shape and byte offset into the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{init_model, TransformerConfig, TransformerWeights};
use crate::params::ParamStore;
use crate::prompt::{init_prompt_encoder, PromptEncoderConfig, PromptEncoderState};

pub const FORMAT: &str = "softprompt-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// `transformer` or `prompt_encoder`.
    pub kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub frozen: bool,
    pub arrays: Vec<ArrayEntry>,
}

pub fn encode(
    kind: &str,
    config: serde_json::Value,
    seed: u64,
    step: u64,
    frozen: bool,
    params: &ParamStore<f32>,
) -> Result<Vec<u8>> {
    let mut arrays = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        let len = (t.numel() * 4) as u64;
        arrays.push(ArrayEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len,
        });
        offset += len;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        kind: kind.into(),
        config,
        seed,
        step,
        frozen,
        arrays,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Manifest, ParamStore<f32>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    let mlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let data_start = 8usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("manifest length exceeds file"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[8..data_start])?;
    if manifest.format != FORMAT {
        return Err(bad(&format!("unknown format `{}`", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(bad(&format!("unsupported version {}", manifest.version)));
    }
    let data = &bytes[data_start..];
    let mut params = ParamStore::new();
    let mut expected_offset = 0u64;
    for a in &manifest.arrays {
        let numel: usize = a.shape.iter().product();
        if a.len != (numel * 4) as u64 || a.offset != expected_offset {
            return Err(bad(&format!("array `{}` has inconsistent shape/offset", a.name)));
        }
        let end = (a.offset + a.len) as usize;
        if end > data.len() {
            return Err(bad(&format!("array `{}` runs past end of file", a.name)));
        }
        let values = data[a.offset as usize..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(a.name.clone(), Tensor::new(a.shape.clone(), values)?);
        expected_offset = a.offset + a.len;
    }
    if expected_offset as usize != data.len() {
        return Err(bad("trailing bytes after last array"));
    }
    Ok((manifest, params))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Manifest, ParamStore<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Checks that `loaded` has exactly the names and shapes of `template`.
pub fn check_layout(template: &ParamStore<f32>, loaded: &ParamStore<f32>) -> Result<()> {
    if template.len() != loaded.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} arrays, found {}",
            template.len(),
            loaded.len()
        )));
    }
    for ((tn, tt), (ln, lt)) in template.iter().zip(loaded.iter()) {
        if tn != ln || tt.shape() != lt.shape() {
            return Err(Error::Checkpoint(format!(
                "array `{ln}` {:?} does not match expected `{tn}` {:?}",
                lt.shape(),
                tt.shape()
            )));
        }
    }
    Ok(())
}

pub fn transformer_bytes(w: &TransformerWeights<f32>, seed: u64, step: u64) -> Result<Vec<u8>> {
    encode(
        "transformer",
        serde_json::to_value(w.config)?,
        seed,
        step,
        w.frozen,
        &w.params,
    )
}

pub fn transformer_from_bytes(bytes: &[u8]) -> Result<(Manifest, TransformerWeights<f32>)> {
    let (manifest, params) = decode(bytes)?;
    if manifest.kind != "transformer" {
        return Err(Error::Checkpoint(format!(
            "expected transformer, found `{}`",
            manifest.kind
        )));
    }
    let config: TransformerConfig = serde_json::from_value(manifest.config.clone())?;
    let template = init_model::<f32>(&config, 0)?;
    check_layout(&template.params, &params)?;
    let frozen = manifest.frozen;
    Ok((manifest, TransformerWeights { config, params, frozen }))
}

pub fn save_transformer(path: &Path, w: &TransformerWeights<f32>, seed: u64, step: u64) -> Result<()> {
    write(path, &transformer_bytes(w, seed, step)?)
}

pub fn load_transformer(path: &Path) -> Result<TransformerWeights<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(transformer_from_bytes(&bytes)?.1)
}

pub fn prompt_bytes(p: &PromptEncoderState<f32>, seed: u64, step: u64) -> Result<Vec<u8>> {
    encode(
        "prompt_encoder",
        serde_json::to_value(p.config)?,
        seed,
        step,
        false,
        &p.params,
    )
}

pub fn prompt_from_bytes(bytes: &[u8]) -> Result<(Manifest, PromptEncoderState<f32>)> {
    let (manifest, params) = decode(bytes)?;
    if manifest.kind != "prompt_encoder" {
        return Err(Error::Checkpoint(format!(
            "expected prompt_encoder, found `{}`",
            manifest.kind
        )));
    }
    let config: PromptEncoderConfig = serde_json::from_value(manifest.config.clone())?;
    let template = init_prompt_encoder::<f32>(&config, 0)?;
    check_layout(&template.params, &params)?;
    Ok((manifest, PromptEncoderState { config, params }))
}

pub fn save_prompt(path: &Path, p: &PromptEncoderState<f32>, seed: u64, step: u64) -> Result<()> {
    write(path, &prompt_bytes(p, seed, step)?)
}

pub fn load_prompt(path: &Path) -> Result<PromptEncoderState<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(prompt_from_bytes(&bytes)?.1)
}
