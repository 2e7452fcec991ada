//! Model checkpoints: a binary file of named f32 tensors plus a JSON sidecar
//! with everything needed to rebuild and use the model.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "FLCK"  magic, u8 version (= 1), u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 rank, rank × u32 dims,
//!             product(dims) × f32
//! ```
//!
//! Tensor names are `<network>.params.<slice>` and `<network>.buffers.<slice>`
//! where `<network>` is `generator`, `discriminator` or `denoiser`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use flimsr_core::bbdm::{BbdmTrainConfig, Denoiser, DiffusionSchedule};
use flimsr_core::degrade::PreprocessStats;
use flimsr_core::gan::TrainConfig;
use flimsr_core::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use flimsr_core::nn::ParamStore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FLCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cgan,
    Bbdm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionMeta {
    pub total_steps: usize,
    pub variance_scale: f64,
    /// How the low-resolution input enters the denoiser.
    pub conditioning: String,
}

/// JSON sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u8,
    pub model: ModelKind,
    pub k: usize,
    pub seed: u64,
    pub steps_trained: usize,
    pub generator: GeneratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<DiscriminatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionMeta>,
    /// Full training configuration as used.
    pub train_config: serde_json::Value,
    /// Where inference finds the clip/normalization statistics, relative to
    /// each low-resolution input (`<stem>.stats.json`) unless overridden.
    pub stats_reference: String,
}

pub const STATS_REFERENCE: &str = "per-image <stem>.stats.json written by `flimsr degrade`";
pub const UPSAMPLED_CONDITIONING: &str = "bilinear-upsampled LR concatenated with x_t";

impl CheckpointMeta {
    pub fn for_cgan(config: &TrainConfig, steps_trained: usize) -> Result<Self> {
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            model: ModelKind::Cgan,
            k: config.k,
            seed: config.seed,
            steps_trained,
            generator: config.generator,
            discriminator: Some(config.discriminator),
            alpha: Some(config.alpha),
            diffusion: None,
            train_config: serde_json::to_value(config)?,
            stats_reference: STATS_REFERENCE.into(),
        })
    }

    pub fn for_bbdm(config: &BbdmTrainConfig, steps_trained: usize) -> Result<Self> {
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            model: ModelKind::Bbdm,
            k: config.k,
            seed: config.seed,
            steps_trained,
            generator: config.denoiser,
            discriminator: None,
            alpha: None,
            diffusion: Some(DiffusionMeta {
                total_steps: config.diffusion_steps,
                variance_scale: config.variance_scale,
                conditioning: UPSAMPLED_CONDITIONING.into(),
            }),
            train_config: serde_json::to_value(config)?,
            stats_reference: STATS_REFERENCE.into(),
        })
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let d = self
            .diffusion
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no diffusion parameters".into()))?;
        Ok(DiffusionSchedule::new(d.total_steps, d.variance_scale)?)
    }
}

/// Sidecar path for a checkpoint: `model.ckpt` → `model.ckpt.json`.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub type TensorMap = BTreeMap<String, NamedTensor>;

pub fn collect_store(prefix: &str, store: &ParamStore, out: &mut TensorMap) {
    for slice in store.slices() {
        out.insert(
            format!("{prefix}.{}", slice.name),
            NamedTensor {
                shape: slice.shape.clone(),
                data: store.values()[slice.offset..slice.offset + slice.len()].to_vec(),
            },
        );
    }
}

/// Copies every slice of `store` from `map`, checking names and shapes.
pub fn restore_store(prefix: &str, store: &mut ParamStore, map: &TensorMap) -> Result<()> {
    let slices = store.slices().to_vec();
    for slice in slices {
        let name = format!("{prefix}.{}", slice.name);
        let t = map
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
        if t.shape != slice.shape {
            return Err(Error::Format(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                t.shape, slice.shape
            )));
        }
        store.values_mut()[slice.offset..slice.offset + slice.len()].copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn encode_tensors(map: &TensorMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (name, t) in map {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("tensor {name} holds non-finite data")));
        }
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<TensorMap> {
    let truncated = || Error::Format("truncated checkpoint".into());
    if bytes.len() < 9 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", bytes[4])));
    }
    let mut pos = 9;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        let s = bytes.get(pos..end).ok_or_else(truncated)?;
        pos = end;
        Ok(s)
    };
    let count = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let mut map = TensorMap::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
        }
        let n: usize = shape.iter().product();
        let data = take(n.checked_mul(4).ok_or_else(truncated)?)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        map.insert(name, NamedTensor { shape, data });
    }
    Ok(map)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(path))
}

fn save(path: &Path, map: &TensorMap, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_tensors(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    write_json(meta, &sidecar_path(path))
}

pub fn save_cgan(path: &Path, generator: &Generator, discriminator: &Discriminator, meta: &CheckpointMeta) -> Result<()> {
    let mut map = TensorMap::new();
    collect_store("generator.params", generator.params(), &mut map);
    collect_store("generator.buffers", generator.buffers(), &mut map);
    collect_store("discriminator.params", discriminator.params(), &mut map);
    collect_store("discriminator.buffers", discriminator.buffers(), &mut map);
    save(path, &map, meta)
}

pub fn save_bbdm(path: &Path, denoiser: &Denoiser, meta: &CheckpointMeta) -> Result<()> {
    let mut map = TensorMap::new();
    collect_store("denoiser.params", denoiser.network.params(), &mut map);
    collect_store("denoiser.buffers", denoiser.network.buffers(), &mut map);
    save(path, &map, meta)
}

pub fn load_meta(path: &Path) -> Result<CheckpointMeta> {
    let meta: CheckpointMeta = read_json(&sidecar_path(path))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint sidecar version {}", meta.format_version)));
    }
    Ok(meta)
}

fn load_tensors(path: &Path) -> Result<TensorMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes).map_err(|e| e.context(path))
}

pub fn load_generator(path: &Path) -> Result<(Generator, CheckpointMeta)> {
    let meta = load_meta(path)?;
    if meta.model != ModelKind::Cgan {
        return Err(Error::Config(format!("{} is not a cgan checkpoint", path.display())));
    }
    let map = load_tensors(path)?;
    let mut g = Generator::new(meta.generator, 0)?;
    restore_store("generator.params", g.params_mut(), &map)?;
    restore_store("generator.buffers", g.buffers_mut(), &map)?;
    Ok((g, meta))
}

pub fn load_discriminator(path: &Path) -> Result<Discriminator> {
    let meta = load_meta(path)?;
    let config = meta
        .discriminator
        .ok_or_else(|| Error::Config(format!("{} has no discriminator", path.display())))?;
    let map = load_tensors(path)?;
    let mut d = Discriminator::new(config, 0)?;
    restore_store("discriminator.params", d.params_mut(), &map)?;
    restore_store("discriminator.buffers", d.buffers_mut(), &map)?;
    Ok(d)
}

pub fn load_denoiser(path: &Path) -> Result<(Denoiser, CheckpointMeta)> {
    let meta = load_meta(path)?;
    if meta.model != ModelKind::Bbdm {
        return Err(Error::Config(format!("{} is not a bbdm checkpoint", path.display())));
    }
    let map = load_tensors(path)?;
    let mut g = Generator::new(meta.generator, 0)?;
    restore_store("denoiser.params", g.params_mut(), &map)?;
    restore_store("denoiser.buffers", g.buffers_mut(), &map)?;
    Ok((Denoiser::from_network(g)?, meta))
}

/// Loads preprocessing statistics written by `flimsr degrade`.
pub fn load_stats(path: &Path) -> Result<PreprocessStats> {
    read_json(path)
}

pub fn save_stats(stats: &PreprocessStats, path: &Path) -> Result<()> {
    write_json(stats, path)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(value, path)
}
