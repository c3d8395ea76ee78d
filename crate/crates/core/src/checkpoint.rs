//! Binary training checkpoints.
//!
//! Layout: the five bytes `AIGN1`, a little-endian `u64` metadata length,
//! the JSON metadata, then every array as little-endian `f64` in the order
//! listed by the metadata (generator parameters, discriminator parameters,
//! generator Adam moments, discriminator Adam moments).

use std::path::Path;

use navinstruct_tensor::{AdamConfig, AdamState, Stream, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::TOOL_VERSION;
use crate::discriminator::Discriminator;
use crate::error::{io_err, CoreError, Result};
use crate::generator::Generator;
use crate::nn::TransformerDims;
use crate::text::Vocab;
use crate::trainer::{Phase, TrainState};

pub const MAGIC: &[u8; 5] = b"AIGN1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub tool_version: String,
    pub config: TrainConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub phase: Phase,
    pub phase_step: u64,
    /// Bit pattern of the smoothed pretraining loss.
    pub ce_ema_bits: Option<u64>,
    pub generator_dims: TransformerDims,
    pub discriminator_dims: TransformerDims,
    pub adam_g_t: u64,
    pub adam_d_t: u64,
    pub arrays: Vec<ArrayInfo>,
}

fn sections(state: &TrainState) -> Vec<(String, &[Tensor])> {
    let g = &state.generator.net.store;
    let d = &state.discriminator.net.store;
    vec![
        ("generator".into(), g.tensors()),
        ("discriminator".into(), d.tensors()),
        ("adam_g.m".into(), &state.adam_g.first[..]),
        ("adam_g.v".into(), &state.adam_g.second[..]),
        ("adam_d.m".into(), &state.adam_d.first[..]),
        ("adam_d.v".into(), &state.adam_d.second[..]),
    ]
}

fn array_infos(state: &TrainState) -> Vec<ArrayInfo> {
    let gn = state.generator.net.store.names();
    let dn = state.discriminator.net.store.names();
    let mut out = Vec::new();
    for (prefix, tensors) in sections(state) {
        let names = if prefix.starts_with("adam_g") || prefix == "generator" { gn } else { dn };
        for (n, t) in names.iter().zip(tensors) {
            out.push(ArrayInfo {
                name: format!("{prefix}.{n}"),
                shape: t.shape().to_vec(),
            });
        }
    }
    out
}

pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let meta = CheckpointMeta {
        tool_version: TOOL_VERSION.to_string(),
        config: state.config.clone(),
        vocab_hash: state.vocab_hash.clone(),
        step: state.step,
        phase: state.phase,
        phase_step: state.phase_step,
        ce_ema_bits: state.ce_ema.map(f64::to_bits),
        generator_dims: state.generator.net.dims,
        discriminator_dims: state.discriminator.net.dims,
        adam_g_t: state.adam_g.t,
        adam_d_t: state.adam_d.t,
        arrays: array_infos(state),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, tensors) in sections(state) {
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn parse_meta(bytes: &[u8]) -> Result<(CheckpointMeta, usize)> {
    let bad = |m: &str| CoreError::Checkpoint(m.to_string());
    if bytes.len() < 13 || &bytes[..5] != MAGIC {
        return Err(bad("not an AIGN1 checkpoint"));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let end = 13usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated metadata"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[13..end])
        .map_err(|e| CoreError::Checkpoint(format!("bad metadata: {e}")))?;
    Ok((meta, end))
}

pub fn from_bytes(bytes: &[u8], vocab: &Vocab) -> Result<TrainState> {
    let (meta, mut offset) = parse_meta(bytes)?;
    let hash = vocab.hash();
    if meta.vocab_hash != hash {
        return Err(CoreError::Checkpoint(format!(
            "vocabulary hash {} does not match checkpoint {}",
            hash, meta.vocab_hash
        )));
    }
    let config = meta.config.clone();
    config.validate()?;
    let layout = config.layout();
    let mut scratch = Stream::from_seed(0);
    let mut generator = Generator::new(meta.generator_dims, layout, &mut scratch);
    generator.feed = config.feed;
    let mut discriminator = Discriminator::new(meta.discriminator_dims, layout, &mut scratch);
    discriminator.pooling = config.pooling;
    let adam = AdamConfig::with_lr(config.lr);
    let mut adam_g = AdamState::new(adam, generator.net.store.tensors());
    let mut adam_d = AdamState::new(adam, discriminator.net.store.tensors());
    adam_g.t = meta.adam_g_t;
    adam_d.t = meta.adam_d_t;

    let mut state = TrainState {
        config,
        vocab_hash: meta.vocab_hash.clone(),
        generator,
        discriminator,
        adam_g,
        adam_d,
        step: meta.step,
        phase: meta.phase,
        phase_step: meta.phase_step,
        ce_ema: meta.ce_ema_bits.map(f64::from_bits),
    };
    if array_infos(&state) != meta.arrays {
        return Err(CoreError::Checkpoint(
            "array layout does not match the model configuration".into(),
        ));
    }
    let targets: Vec<&mut Tensor> = {
        let TrainState {
            generator,
            discriminator,
            adam_g,
            adam_d,
            ..
        } = &mut state;
        generator
            .net
            .store
            .tensors_mut()
            .iter_mut()
            .chain(discriminator.net.store.tensors_mut().iter_mut())
            .chain(adam_g.first.iter_mut())
            .chain(adam_g.second.iter_mut())
            .chain(adam_d.first.iter_mut())
            .chain(adam_d.second.iter_mut())
            .collect()
    };
    for t in targets {
        let n = t.len() * 8;
        let chunk = bytes
            .get(offset..offset + n)
            .ok_or_else(|| CoreError::Checkpoint("truncated array data".into()))?;
        for (dst, src) in t.data_mut().iter_mut().zip(chunk.chunks_exact(8)) {
            *dst = f64::from_le_bytes(src.try_into().unwrap());
        }
        offset += n;
    }
    if offset != bytes.len() {
        return Err(CoreError::Checkpoint("trailing bytes after array data".into()));
    }
    Ok(state)
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(state)).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load(path: &Path, vocab: &Vocab) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    from_bytes(&bytes, vocab)
}

/// Metadata only, without needing the vocabulary.
pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    parse_meta(&bytes).map(|(m, _)| m)
}
