//! Binary parameter container.
//!
//! Layout: magic `CFLO`, format version `u16` little-endian, `u32`
//! little-endian metadata length, a JSON metadata block, then raw
//! little-endian `f64` tensors.
//!
//! Network files store weights (layer order, row-major), then biases, then
//! the time-embedding frequencies; when `has_ema` is set a second block
//! with the same layout follows for the EMA shadow. Pair files
//! (`role = "pairs"`) store two blocks: latents then outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::data::Normalization;
use crate::distill::PairSet;
use crate::error::{Error, Result};
use crate::interpolant::InterpolantKind;
use crate::linalg::Matrix;
use crate::loss::Parameterization;
use crate::net::{Activation, NetworkParams};
use crate::solver::SolverConfig;

pub const MAGIC: &[u8; 4] = b"CFLO";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Encoder,
    Student,
    Pairs,
}

/// Metadata block of a network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub role: Role,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub n_freqs: usize,
    pub config_hash: String,
    pub global_step: u64,
    pub has_ema: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameterization: Option<Parameterization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolant: Option<InterpolantKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    /// The producing run configuration, echoed verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: NetworkParams,
    pub ema: Option<NetworkParams>,
}

impl Checkpoint {
    /// Parameters to use for inference: the EMA shadow when present.
    pub fn inference_params(&self) -> &NetworkParams {
        self.ema.as_ref().unwrap_or(&self.params)
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Config(format!("corrupt checkpoint: {}", msg.into()))
}

fn encode_container(meta_json: &[u8], floats: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + meta_json.len() + 8 * floats.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_json);
    for v in floats {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_container(bytes: &[u8]) -> Result<(Vec<u8>, Vec<f64>)> {
    if bytes.len() < 10 {
        return Err(corrupt("file shorter than the header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let meta_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let meta_end = 10 + meta_len;
    if bytes.len() < meta_end {
        return Err(corrupt("truncated metadata block"));
    }
    let meta = bytes[10..meta_end].to_vec();
    let payload = &bytes[meta_end..];
    if payload.len() % 8 != 0 {
        return Err(corrupt("tensor payload is not a whole number of f64s"));
    }
    let floats = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((meta, floats))
}

fn network_floats(params: &NetworkParams, out: &mut Vec<f64>) {
    for w in &params.layer_weights {
        out.extend_from_slice(&w.data);
    }
    for b in &params.layer_biases {
        out.extend_from_slice(b);
    }
    out.extend_from_slice(&params.time_embed_frequencies);
}

fn network_float_count(layer_sizes: &[usize], n_freqs: usize) -> usize {
    let mut count = n_freqs;
    for w in layer_sizes.windows(2) {
        count += w[0] * w[1] + w[1];
    }
    count
}

fn network_from_floats(
    layer_sizes: &[usize],
    n_freqs: usize,
    activation: Activation,
    floats: &[f64],
) -> Result<NetworkParams> {
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<&[f64]> {
        let slice = floats
            .get(pos..pos + len)
            .ok_or_else(|| corrupt("tensor payload shorter than the declared shapes"))?;
        pos += len;
        Ok(slice)
    };
    let mut weights = Vec::new();
    for w in layer_sizes.windows(2) {
        let (rows, cols) = (w[1], w[0]);
        weights.push(Matrix {
            rows,
            cols,
            data: take(rows * cols)?.to_vec(),
        });
    }
    let mut biases = Vec::new();
    for w in layer_sizes.windows(2) {
        biases.push(take(w[1])?.to_vec());
    }
    let freqs = take(n_freqs)?.to_vec();
    let params = NetworkParams {
        layer_weights: weights,
        layer_biases: biases,
        time_embed_frequencies: freqs,
        activation,
    };
    params.validate()?;
    Ok(params)
}

/// Serialize a checkpoint to its exact on-disk bytes.
pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = &ckpt.meta;
    if meta.role == Role::Pairs {
        return Err(Error::Config("pairs use write_pairs, not write_checkpoint".into()));
    }
    if meta.layer_sizes != ckpt.params.layer_sizes() {
        return Err(Error::Shape("meta layer_sizes do not match parameters".into()));
    }
    if meta.n_freqs != ckpt.params.time_embed_frequencies.len() {
        return Err(Error::Shape("meta n_freqs does not match parameters".into()));
    }
    if meta.has_ema != ckpt.ema.is_some() {
        return Err(Error::Shape("meta has_ema does not match payload".into()));
    }
    let meta_json = serde_json::to_vec(meta)?;
    let mut floats = Vec::new();
    network_floats(&ckpt.params, &mut floats);
    if let Some(ema) = &ckpt.ema {
        if ema.layer_sizes() != ckpt.params.layer_sizes() {
            return Err(Error::Shape("EMA shapes do not match live parameters".into()));
        }
        network_floats(ema, &mut floats);
    }
    Ok(encode_container(&meta_json, &floats))
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(ckpt)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(&path)?;
    checkpoint_from_bytes(&bytes)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (meta_json, floats) = decode_container(bytes)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_json).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if meta.role == Role::Pairs {
        return Err(corrupt("this is a pair set, not a network checkpoint"));
    }
    if meta.layer_sizes.len() < 2 {
        return Err(corrupt("metadata declares fewer than two layers"));
    }
    let block = network_float_count(&meta.layer_sizes, meta.n_freqs);
    let expected = if meta.has_ema { 2 * block } else { block };
    if floats.len() != expected {
        return Err(corrupt(format!(
            "expected {expected} floats, found {}",
            floats.len()
        )));
    }
    let params = network_from_floats(
        &meta.layer_sizes,
        meta.n_freqs,
        meta.activation,
        &floats[..block],
    )?;
    let ema = if meta.has_ema {
        Some(network_from_floats(
            &meta.layer_sizes,
            meta.n_freqs,
            meta.activation,
            &floats[block..],
        )?)
    } else {
        None
    };
    Ok(Checkpoint { meta, params, ema })
}

/// Metadata block of a stored pair set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsMeta {
    pub role: Role,
    pub n_pairs: usize,
    pub dim: usize,
    pub teacher_solver: SolverConfig,
    pub teacher_checkpoint_hash: String,
    pub total_teacher_nfe: usize,
    pub config_hash: String,
}

pub fn pairs_bytes(pairs: &PairSet, config_hash: &str) -> Result<Vec<u8>> {
    let dim = pairs.dim();
    let meta = PairsMeta {
        role: Role::Pairs,
        n_pairs: pairs.len(),
        dim,
        teacher_solver: pairs.teacher_solver,
        teacher_checkpoint_hash: pairs.teacher_checkpoint_hash.clone(),
        total_teacher_nfe: pairs.total_teacher_nfe,
        config_hash: config_hash.to_string(),
    };
    let meta_json = serde_json::to_vec(&meta)?;
    let mut floats = Vec::with_capacity(2 * pairs.len() * dim);
    for z in &pairs.z_inputs {
        floats.extend_from_slice(z);
    }
    for x in &pairs.x_outputs {
        floats.extend_from_slice(x);
    }
    Ok(encode_container(&meta_json, &floats))
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &PairSet, config_hash: &str) -> Result<()> {
    std::fs::write(path, pairs_bytes(pairs, config_hash)?)?;
    Ok(())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<(PairSet, PairsMeta)> {
    let bytes = std::fs::read(&path)?;
    let (meta_json, floats) = decode_container(&bytes)?;
    let meta: PairsMeta =
        serde_json::from_slice(&meta_json).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if meta.role != Role::Pairs {
        return Err(corrupt("expected role=pairs"));
    }
    let expected = 2 * meta.n_pairs * meta.dim;
    if floats.len() != expected {
        return Err(corrupt(format!(
            "expected {expected} floats, found {}",
            floats.len()
        )));
    }
    let chunk = |offset: usize| -> Vec<Vec<f64>> {
        (0..meta.n_pairs)
            .map(|i| floats[offset + i * meta.dim..offset + (i + 1) * meta.dim].to_vec())
            .collect()
    };
    let pairs = PairSet {
        z_inputs: chunk(0),
        x_outputs: chunk(meta.n_pairs * meta.dim),
        teacher_solver: meta.teacher_solver,
        teacher_checkpoint_hash: meta.teacher_checkpoint_hash.clone(),
        total_teacher_nfe: meta.total_teacher_nfe,
    };
    Ok((pairs, meta))
}

/// SHA-256 of a file's bytes; used to pin teacher checkpoints in pair sets.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}
