//! Experiment configuration: one flat JSON document for a whole run.

use std::path::{Path, PathBuf};

use flimsr_core::bbdm::{denoiser_config, BbdmTrainConfig, DEFAULT_DIFFUSION_STEPS};
use flimsr_core::degrade::{check_factor, NormScope, DEFAULT_CLIP_PERCENTILE, DEFAULT_PATCH_PX};
use flimsr_core::gan::{default_alpha, TrainConfig, DEFAULT_TILE_PX};
use flimsr_core::metrics::{MetricConstants, SsimMode};
use flimsr_core::networks::{DiscriminatorConfig, GeneratorConfig, DEFAULT_RESIDUAL_GAMMA};
use flimsr_core::nn::AdamConfig;
use flimsr_core::phantom::PhantomSpec;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, ModelKind};
use crate::error::{Error, Result};

/// Every key is optional in the file; missing keys take the values below.
/// Relative paths are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    pub model: ModelKind,
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Raw dataset (`<patient>/fov_<i>.flimb`). Absent: generate a phantom.
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,

    pub n_patients: usize,
    pub fovs_per_patient: usize,
    pub fov_size: usize,
    pub lifetime_range: [f32; 2],
    pub structure_scales: Vec<f32>,
    pub cross_channel_correlation: f32,
    /// Patients assigned to training; the rest are held out.
    pub train_patients: usize,

    pub clip_percentile: f64,
    pub norm_scope: NormScope,
    pub patch_px: usize,

    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    /// Adversarial weight; absent: 0.1 for k ≤ 3, 1.0 above.
    pub alpha: Option<f64>,
    pub base_channels: usize,
    pub levels: usize,
    /// Convolution units per generator block (the denoiser keeps its own).
    pub convs_per_block: usize,
    pub residual_gamma_init: f32,
    pub zero_head: bool,
    pub disc_base_channels: usize,
    pub disc_blocks: usize,
    pub checkpoint_interval: usize,

    pub diffusion_steps: usize,
    pub variance_scale: f64,
    pub time_embed_dim: usize,
    /// Reverse steps at inference; absent: all diffusion steps.
    pub sampling_steps: Option<usize>,

    pub ssim_mode: SsimMode,
    pub data_range: f64,
    pub tile_px: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let phantom = PhantomSpec::default();
        let adam = AdamConfig::default();
        let g = GeneratorConfig::default();
        let d = DiscriminatorConfig::default();
        Self {
            k: 2,
            model: ModelKind::Cgan,
            seed: 0,
            data_dir: None,
            output_dir: PathBuf::from("run"),
            n_patients: phantom.n_patients,
            fovs_per_patient: phantom.fovs_per_patient,
            fov_size: phantom.fov_size,
            lifetime_range: phantom.lifetime_range,
            structure_scales: phantom.structure_scales,
            cross_channel_correlation: phantom.cross_channel_correlation,
            train_patients: 15,
            clip_percentile: DEFAULT_CLIP_PERCENTILE,
            norm_scope: NormScope::Wsi,
            patch_px: DEFAULT_PATCH_PX,
            steps: 1000,
            batch_size: 4,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            alpha: None,
            base_channels: g.base_channels,
            levels: g.levels,
            convs_per_block: g.convs_per_block,
            residual_gamma_init: DEFAULT_RESIDUAL_GAMMA,
            zero_head: g.zero_head,
            disc_base_channels: d.base_channels,
            disc_blocks: d.blocks,
            checkpoint_interval: 0,
            diffusion_steps: DEFAULT_DIFFUSION_STEPS,
            variance_scale: 1.0,
            time_embed_dim: 64,
            sampling_steps: None,
            ssim_mode: SsimMode::Global,
            data_range: 1.0,
            tile_px: DEFAULT_TILE_PX,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.output_dir = resolve(&cfg.output_dir);
        cfg.data_dir = cfg.data_dir.as_deref().map(resolve);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_factor(self.k)?;
        if let Some(dir) = &self.data_dir {
            if !dir.is_dir() {
                return Err(Error::Config(format!("data_dir {} does not exist", dir.display())));
            }
        } else {
            self.phantom_spec().validate()?;
        }
        if self.train_patients == 0 {
            return Err(Error::Config("train_patients must be at least 1".into()));
        }
        MetricConstants::new(self.data_range)?;
        self.train_config().validate()?;
        self.bbdm_config().schedule()?;
        Ok(())
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            n_patients: self.n_patients,
            fovs_per_patient: self.fovs_per_patient,
            fov_size: self.fov_size,
            lifetime_range: self.lifetime_range,
            structure_scales: self.structure_scales.clone(),
            cross_channel_correlation: self.cross_channel_correlation,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            k: self.k,
            alpha: self.alpha.unwrap_or_else(|| default_alpha(self.k)),
            batch_size: self.batch_size,
            steps: self.steps,
            adam: self.adam(),
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            validation_interval: 0,
            generator: GeneratorConfig {
                base_channels: self.base_channels,
                levels: self.levels,
                convs_per_block: self.convs_per_block,
                residual_gamma_init: self.residual_gamma_init,
                zero_head: self.zero_head,
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig {
                base_channels: self.disc_base_channels,
                blocks: self.disc_blocks,
                ..DiscriminatorConfig::default()
            },
        }
    }

    pub fn bbdm_config(&self) -> BbdmTrainConfig {
        BbdmTrainConfig {
            k: self.k,
            diffusion_steps: self.diffusion_steps,
            variance_scale: self.variance_scale,
            batch_size: self.batch_size,
            steps: self.steps,
            adam: self.adam(),
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            denoiser: GeneratorConfig {
                residual_gamma_init: self.residual_gamma_init,
                zero_head: self.zero_head,
                ..denoiser_config(6, self.base_channels, self.levels, self.time_embed_dim)
            },
        }
    }
}
