//! Brownian-bridge diffusion baseline in image space.
//!
//! The bridge runs from the target `x_0` at `t = 0` to the upsampled
//! condition `y` at `t = T`:
//! `x_t = (1 − m_t) x_0 + m_t y + √δ_t ε` with `m_t = t/T` and
//! `δ_t = 2s (m_t − m_t²)`. A time-conditioned U-Net sees `[x_t, y]` and
//! predicts `ε`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::degrade::{check_factor, PairedPatch, PreprocessStats};
use crate::gan::{run_tiled, EpochSampler};
use crate::image::FlimImage;
use crate::networks::{resize_tensor, Generator, GeneratorConfig};
use crate::nn::{concat_channels, Adam, AdamConfig, Tensor};
use crate::rng::{derive_seed, normal_f32, stage, stage_rng, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    total: usize,
    scale: f64,
    m: Vec<f64>,
    delta: Vec<f64>,
}

pub const DEFAULT_DIFFUSION_STEPS: usize = 1000;

impl DiffusionSchedule {
    pub fn new(total: usize, scale: f64) -> Result<Self> {
        if total < 2 {
            return Err(Error::InvalidArgument(format!("diffusion needs T >= 2, got {total}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("variance scale {scale} must be positive")));
        }
        let m: Vec<f64> = (0..=total).map(|t| t as f64 / total as f64).collect();
        let delta = m.iter().map(|&m| 2.0 * scale * (m - m * m)).collect();
        Ok(Self { total, scale, m, delta })
    }

    /// `T`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn m(&self, t: usize) -> f64 {
        self.m[t]
    }

    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.total {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 0..={}", self.total)));
        }
        Ok(())
    }
}

fn check_same(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

/// Bridge state at `t` for a given noise draw.
pub fn forward_with_noise(
    x0: &[f32],
    y: &[f32],
    noise: &[f32],
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f32>> {
    check_same(x0, y)?;
    check_same(x0, noise)?;
    schedule.check_t(t)?;
    let (m, sd) = (schedule.m(t), schedule.delta(t).sqrt());
    Ok(x0
        .iter()
        .zip(y)
        .zip(noise)
        .map(|((&a, &b), &e)| ((1.0 - m) * a as f64 + m * b as f64 + sd * e as f64) as f32)
        .collect())
}

/// Samples `x_t`, drawing one standard normal per element from `rng`.
pub fn forward_sample(x0: &[f32], y: &[f32], t: usize, schedule: &DiffusionSchedule, rng: &mut Rng) -> Result<Vec<f32>> {
    check_same(x0, y)?;
    let noise: Vec<f32> = (0..x0.len()).map(|_| normal_f32(rng)).collect();
    forward_with_noise(x0, y, &noise, t, schedule)
}

/// Anything that estimates the bridge noise from `(x_t, y, t)`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Tensor, y: &Tensor, t: usize) -> Result<Tensor>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&Tensor, &Tensor, usize) -> Result<Tensor>,
{
    fn predict_noise(&self, x_t: &Tensor, y: &Tensor, t: usize) -> Result<Tensor> {
        self(x_t, y, t)
    }
}

/// Generator topology with `2C` inputs, `C` outputs and time embeddings.
pub fn denoiser_config(image_channels: usize, base_channels: usize, levels: usize, time_embed_dim: usize) -> GeneratorConfig {
    GeneratorConfig {
        in_channels: 2 * image_channels,
        out_channels: image_channels,
        base_channels,
        levels,
        convs_per_block: 2,
        time_embed_dim,
        ..GeneratorConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub network: Generator,
}

impl Denoiser {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        Self::from_network(Generator::new(config, seed)?)
    }

    pub fn from_network(network: Generator) -> Result<Self> {
        let c = network.config();
        if c.time_embed_dim == 0 || c.in_channels != 2 * c.out_channels {
            return Err(Error::InvalidArgument(format!(
                "denoiser needs 2C inputs, C outputs and a time embedding, got {c:?}"
            )));
        }
        Ok(Self { network })
    }

    pub fn image_channels(&self) -> usize {
        self.network.config().out_channels
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, x_t: &Tensor, y: &Tensor, t: usize) -> Result<Tensor> {
        if !x_t.same_shape(y) {
            return Err(Error::ShapeMismatch(format!("x_t {:?} vs y {:?}", x_t.shape(), y.shape())));
        }
        let steps = vec![t; x_t.n];
        self.network.forward_unet(&concat_channels(x_t, y), Some(&steps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbdmTrainConfig {
    pub k: usize,
    /// Number of diffusion steps `T`.
    pub diffusion_steps: usize,
    pub variance_scale: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 disables.
    pub checkpoint_interval: usize,
    pub denoiser: GeneratorConfig,
}

impl BbdmTrainConfig {
    pub fn for_k(k: usize) -> Self {
        Self {
            k,
            diffusion_steps: DEFAULT_DIFFUSION_STEPS,
            variance_scale: 1.0,
            batch_size: 4,
            steps: 1000,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_interval: 0,
            denoiser: denoiser_config(6, 64, 4, 64),
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.diffusion_steps, self.variance_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbdmStepRecord {
    pub step: usize,
    /// Mean squared error of the noise prediction.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BbdmHistory {
    pub steps: Vec<BbdmStepRecord>,
}

fn stack_images(images: &[&FlimImage]) -> Tensor {
    let f = images[0];
    let s: Vec<&[f32]> = images.iter().map(|i| i.data()).collect();
    Tensor::stack(&s, f.num_channels(), f.height(), f.width())
}

/// Step-wise denoiser training state.
pub struct BbdmTrainer {
    pub config: BbdmTrainConfig,
    pub denoiser: Denoiser,
    schedule: DiffusionSchedule,
    opt: Adam,
    noise_rng: Rng,
    steps_done: usize,
}

impl BbdmTrainer {
    pub fn new(config: BbdmTrainConfig) -> Result<Self> {
        check_factor(config.k)?;
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        let schedule = config.schedule()?;
        let denoiser = Denoiser::new(config.denoiser, derive_seed(config.seed, stage::DENOISER_INIT))?;
        Ok(Self {
            opt: Adam::new(config.adam, denoiser.network.num_params()),
            noise_rng: stage_rng(config.seed, stage::DIFFUSION_NOISE),
            schedule,
            denoiser,
            config,
            steps_done: 0,
        })
    }

    pub fn step(&mut self, batch: &[&PairedPatch]) -> Result<BbdmStepRecord> {
        let first = batch.first().ok_or(Error::EmptyDataset)?;
        if let Some(p) = batch.iter().find(|p| p.k != self.config.k) {
            return Err(Error::FactorMismatch {
                expected: self.config.k,
                found: p.k,
            });
        }
        let (h, w) = (first.hr.image.height(), first.hr.image.width());
        let lr: Vec<&FlimImage> = batch.iter().map(|p| &p.lr.image).collect();
        let hr: Vec<&FlimImage> = batch.iter().map(|p| &p.hr.image).collect();
        let y = resize_tensor(&stack_images(&lr), h, w);
        let x0 = stack_images(&hr);
        let total = self.schedule.total();
        let mut x_t = Tensor::zeros(x0.n, x0.c, h, w);
        let mut eps = Tensor::zeros(x0.n, x0.c, h, w);
        let mut ts = Vec::with_capacity(x0.n);
        for i in 0..x0.n {
            let t = self.noise_rng.random_range(1..=total);
            ts.push(t);
            let noise: Vec<f32> = (0..x0.sample_len()).map(|_| normal_f32(&mut self.noise_rng)).collect();
            let xt = forward_with_noise(x0.sample(i), y.sample(i), &noise, t, &self.schedule)?;
            x_t.sample_mut(i).copy_from_slice(&xt);
            eps.sample_mut(i).copy_from_slice(&noise);
        }
        let input = concat_channels(&x_t, &y);
        let (pred, cache) = self.denoiser.network.forward_train(&input, Some(&ts))?;
        let count = pred.data.len() as f64;
        let mut loss = 0.0f64;
        let mut dy = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
        for ((g, &p), &e) in dy.data.iter_mut().zip(&pred.data).zip(&eps.data) {
            let d = p as f64 - e as f64;
            loss += d * d;
            *g = (2.0 * d / count) as f32;
        }
        let mut grads = vec![0.0f32; self.denoiser.network.num_params()];
        self.denoiser.network.backward(&cache, &dy, &mut grads, false);
        self.opt.step(self.denoiser.network.params_mut().values_mut(), &grads);
        self.steps_done += 1;
        Ok(BbdmStepRecord {
            step: self.steps_done,
            loss: loss / count,
        })
    }
}

pub fn train_bbdm(config: &BbdmTrainConfig, dataset: &[PairedPatch]) -> Result<(Denoiser, BbdmHistory)> {
    train_bbdm_with(config, dataset, &mut |_, _| Ok(()))
}

/// Training loop; `checkpoint` is called every `checkpoint_interval` steps.
pub fn train_bbdm_with(
    config: &BbdmTrainConfig,
    dataset: &[PairedPatch],
    checkpoint: &mut dyn FnMut(usize, &Denoiser) -> Result<()>,
) -> Result<(Denoiser, BbdmHistory)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = BbdmTrainer::new(config.clone())?;
    let mut sampler = EpochSampler::new(dataset.len(), derive_seed(config.seed, stage::DATA_ORDER));
    let mut history = BbdmHistory::default();
    for _ in 0..config.steps {
        let batch: Vec<&PairedPatch> = sampler.next_batch(config.batch_size).into_iter().map(|i| &dataset[i]).collect();
        let rec = trainer.step(&batch)?;
        history.steps.push(rec);
        if config.checkpoint_interval > 0 && rec.step % config.checkpoint_interval == 0 {
            checkpoint(rec.step, &trainer.denoiser)?;
        }
    }
    Ok((trainer.denoiser, history))
}

/// Descending timesteps `T = t_0 > … > t_n = 0` for `steps` reverse updates.
pub fn sampling_times(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::StepsOutOfRange { steps, max: total });
    }
    Ok((0..=steps).rev().map(|i| (i * total + steps / 2) / steps).collect())
}

/// Reverse bridge sampling from `x_T = y` down to an `x_0` estimate.
///
/// At each `t → s` the noise estimate gives `x̂_0 = (x_t − m_t y − √δ_t ε̂) / (1 − m_t)`
/// (optionally clipped to `[0, 1]`), and `x_s` is drawn from the bridge
/// posterior given `x_t`, `x̂_0` and `y`. At `t = T` the noise is not
/// identifiable, so `x̂_0 = y` and `x_s` is drawn from the bridge marginal.
/// `s = 0` returns `x̂_0` itself.
pub fn reverse_sample(
    denoiser: &dyn NoisePredictor,
    y: &Tensor,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
    steps: usize,
    clip: bool,
) -> Result<Tensor> {
    let times = sampling_times(schedule.total(), steps)?;
    let total = schedule.total();
    let mut x = y.clone();
    for pair in times.windows(2) {
        let (t, s) = (pair[0], pair[1]);
        let (mt, ms, dt, ds) = (schedule.m(t), schedule.m(s), schedule.delta(t), schedule.delta(s));
        let x0_hat: Vec<f64> = if t == total {
            y.data.iter().map(|&v| v as f64).collect()
        } else {
            let eps = denoiser.predict_noise(&x, y, t)?;
            if !x.same_shape(&eps) {
                return Err(Error::ShapeMismatch(format!("noise estimate {:?}", eps.shape())));
            }
            let sd = dt.sqrt();
            x.data
                .iter()
                .zip(&y.data)
                .zip(&eps.data)
                .map(|((&xt, &yv), &e)| (xt as f64 - mt * yv as f64 - sd * e as f64) / (1.0 - mt))
                .collect()
        };
        let x0_hat: Vec<f64> = if clip { x0_hat.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() } else { x0_hat };
        if s == 0 {
            x.data.iter_mut().zip(&x0_hat).for_each(|(o, &v)| *o = v as f32);
            continue;
        }
        let (gain, var) = if t == total {
            (0.0, ds)
        } else {
            let a = (1.0 - mt) / (1.0 - ms);
            (a * ds / dt, (ds * (dt - a * a * ds) / dt).max(0.0))
        };
        let sd = var.sqrt();
        for ((o, &yv), &x0) in x.data.iter_mut().zip(&y.data).zip(&x0_hat) {
            let yv = yv as f64;
            let mean_s = (1.0 - ms) * x0 + ms * yv;
            let mean_t = (1.0 - mt) * x0 + mt * yv;
            let z = normal_f32(rng) as f64;
            *o = (mean_s + gain * (*o as f64 - mean_t) + sd * z) as f32;
        }
    }
    Ok(x)
}

/// Super-resolves a raw low-resolution image with the diffusion baseline.
#[allow(clippy::too_many_arguments)]
pub fn bbdm_infer(
    denoiser: &Denoiser,
    lr: &FlimImage,
    target_hw: (usize, usize),
    stats: Option<&PreprocessStats>,
    schedule: &DiffusionSchedule,
    steps: usize,
    tile: usize,
    seed: u64,
) -> Result<FlimImage> {
    let stats = stats.ok_or(Error::MissingPreprocessingStats)?;
    lr.ensure_finite()?;
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument("target dimensions must be positive".into()));
    }
    sampling_times(schedule.total(), steps)?;
    let norm = stats.apply(lr)?;
    let y = resize_tensor(&stack_images(&[&norm]), th, tw);
    let mut rng = stage_rng(seed, stage::SAMPLING);
    let multiple = denoiser.network.config().size_multiple();
    let out = run_tiled(&y, tile, multiple, denoiser.image_channels(), |t| {
        reverse_sample(denoiser, t, schedule, &mut rng, steps, true)
    })?;
    let data: Vec<f32> = out.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let pixel = lr.pixel_size_um() * lr.height() as f32 / th as f32;
    lr.with_data(th, tw, pixel, data)
}
