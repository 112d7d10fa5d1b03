//! Checkpoint container, version 1. All integers little-endian.
//!
//! | offset     | size | content                                        |
//! |------------|------|------------------------------------------------|
//! | 0          | 8    | magic `OAFACKPT`                               |
//! | 8          | 4    | format version, `u32`                          |
//! | 12         | 8    | header length `H` in bytes, `u64`              |
//! | 20         | H    | header, UTF-8 JSON (see [`Header`])            |
//! | 20 + H     | 4·T  | payload: every tensor as `f32`, in header order |
//! | end − 32   | 32   | SHA-256 of every preceding byte                |
//!
//! The header lists each tensor's `name`, `shape` `[n, c, h, w]`, byte
//! `offset` into the payload and element count `len`. Parameters are named
//! `G.*`, `F.*` and `D.*`; optimizer moments `adam.m.<param>` and
//! `adam.v.<param>`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamMoments, ModelMoments, StepMetrics, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::networks::{named_tensors, init_params, ModelParams, NamedParams};
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OAFACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 20;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: [usize; 4],
    offset: usize,
    len: usize,
}

/// JSON header of a checkpoint.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    step: u64,
    config: TrainConfig,
    history: Vec<StepMetrics>,
    tensors: Vec<TensorRecord>,
}

fn moment_tensors<'a, P: NamedParams<Tensor>>(
    params: &P,
    prefix: &str,
    moments: &'a AdamMoments,
    out: &mut Vec<(String, &'a Tensor)>,
) {
    let names: Vec<String> = named_tensors(params, prefix).into_iter().map(|(n, _)| n).collect();
    for (kind, list) in [("m", &moments.m), ("v", &moments.v)] {
        for (name, t) in names.iter().zip(list) {
            out.push((format!("adam.{kind}.{name}"), t));
        }
    }
}

fn all_tensors(state: &TrainState) -> Vec<(String, &Tensor)> {
    let p = &state.params;
    let m = &state.moments;
    let mut out = p.named();
    moment_tensors(&p.generator, ModelParams::GENERATOR, &m.generator, &mut out);
    moment_tensors(&p.decoder, ModelParams::DECODER, &m.decoder, &mut out);
    moment_tensors(&p.discriminator, ModelParams::DISCRIMINATOR, &m.discriminator, &mut out);
    out
}

/// Serializes `state` into the container layout.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let tensors = all_tensors(state);
    let mut records = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in &tensors {
        records.push(TensorRecord {
            name: name.clone(),
            shape: t.shape().dims(),
            offset: payload.len(),
            len: t.numel(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        step: state.step,
        config: state.config.clone(),
        history: state.history.clone(),
        tensors: records,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes next to `path` and renames into place, so an interrupted save
/// never leaves a partial file under the final name.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state);
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let bad = |m: &str| Error::Checkpoint(m.to_owned());
    if bytes.len() < PREFIX_LEN {
        return Err(bad("truncated before the header"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated inside the header"))?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let payload_len: usize = header.tensors.iter().map(|t| t.len * 4).sum();
    let expected = header_end + payload_len + DIGEST_LEN;
    if bytes.len() < expected {
        return Err(Error::Checkpoint(format!(
            "truncated: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the digest",
            bytes.len() - expected
        )));
    }
    let body = &bytes[..expected - DIGEST_LEN];
    if Sha256::digest(body).as_slice() != &bytes[expected - DIGEST_LEN..] {
        return Err(bad("digest mismatch"));
    }

    let payload = &bytes[header_end..header_end + payload_len];
    let mut tensors: HashMap<String, Tensor> = HashMap::with_capacity(header.tensors.len());
    for r in &header.tensors {
        let shape = Shape::from_dims(r.shape);
        let end = r.offset + r.len * 4;
        if shape.numel() != r.len || end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor {} has an inconsistent extent", r.name)));
        }
        let data = payload[r.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.insert(r.name.clone(), Tensor::new(shape, data)?);
    }

    header.config.validate()?;
    let mut params = init_params(&header.config.model, header.config.trainer.seed)?;
    params.load_from(&mut |name| tensors.remove(name))?;
    let mut moments = ModelMoments::zeros_like(&params);
    fill_moments(&params.generator, ModelParams::GENERATOR, &mut moments.generator, &mut tensors)?;
    fill_moments(&params.decoder, ModelParams::DECODER, &mut moments.decoder, &mut tensors)?;
    fill_moments(&params.discriminator, ModelParams::DISCRIMINATOR, &mut moments.discriminator, &mut tensors)?;
    if let Some(name) = tensors.keys().min() {
        return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok(TrainState {
        config: header.config,
        params,
        moments,
        step: header.step,
        history: header.history,
    })
}

fn fill_moments<P: NamedParams<Tensor>>(
    params: &P,
    prefix: &str,
    moments: &mut AdamMoments,
    tensors: &mut HashMap<String, Tensor>,
) -> Result<()> {
    let names = named_tensors(params, prefix);
    for (kind, list) in [("m", &mut moments.m), ("v", &mut moments.v)] {
        for ((name, p), slot) in names.iter().zip(list.iter_mut()) {
            let key = format!("adam.{kind}.{name}");
            let t = tensors
                .remove(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.shape() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} is {}, expected {}",
                    t.shape(),
                    p.shape()
                )));
            }
            *slot = t;
        }
    }
    Ok(())
}
