//! Least-squares adversarial training of the super-resolution generator.
//!
//! The discriminator minimizes `D(fake)² + (D(real) − 1)²`; the generator
//! minimizes a Huber pixel loss plus `α (D(fake) − 1)²`. Scores are sigmoid
//! probabilities. Each batch runs one discriminator step on detached
//! generator outputs, then one generator step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::degrade::{check_factor, PairedPatch, PreprocessStats, DEFAULT_PATCH_PX};
use crate::image::FlimImage;
use crate::metrics::{psnr_from_mse, ssim, MetricConstants, SsimMode};
use crate::networks::{resize_tensor, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::nn::{sigmoid, Adam, AdamConfig, Tensor};
use crate::rng::{derive_seed, rng_from_seed, stage, Rng};
use crate::{Error, Result};

/// `u²/2` for `|u| < 1`, else `|u| − 1/2`.
pub fn huber_elementwise(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        0.5 * u * u
    } else {
        a - 0.5
    }
}

/// Derivative of [`huber_elementwise`], `clamp(u, −1, 1)`.
pub fn huber_derivative(u: f64) -> f64 {
    u.clamp(-1.0, 1.0)
}

fn check_pair(pred: &[f32], target: &[f32]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", pred.len(), target.len())));
    }
    Ok(())
}

/// Mean Huber loss over all elements.
pub fn smooth_l1(pred: &[f32], target: &[f32]) -> Result<f64> {
    check_pair(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| huber_elementwise(p as f64 - t as f64))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`smooth_l1`] with respect to `pred`.
pub fn smooth_l1_grad(pred: &[f32], target: &[f32]) -> Result<Vec<f32>> {
    check_pair(pred, target)?;
    let inv = 1.0 / pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (huber_derivative(p as f64 - t as f64) * inv) as f32)
        .collect())
}

pub fn discriminator_loss(d_fake: f64, d_real: f64) -> f64 {
    d_fake * d_fake + (d_real - 1.0) * (d_real - 1.0)
}

pub fn adversarial_term(d_fake: f64) -> f64 {
    (d_fake - 1.0) * (d_fake - 1.0)
}

pub fn generator_loss(pred: &[f32], target: &[f32], d_fake: f64, alpha: f64) -> Result<f64> {
    Ok(smooth_l1(pred, target)? + alpha * adversarial_term(d_fake))
}

/// Adversarial weight by factor: 0.1 for `k ≤ 3`, 1 otherwise.
pub fn default_alpha(k: usize) -> f64 {
    if k <= 3 {
        0.1
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Emit a checkpoint every this many steps; 0 disables.
    pub checkpoint_interval: usize,
    /// Validate every this many steps; 0 disables.
    pub validation_interval: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl TrainConfig {
    pub fn for_k(k: usize) -> Self {
        Self {
            k,
            alpha: default_alpha(k),
            batch_size: 4,
            steps: 1000,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_interval: 0,
            validation_interval: 0,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha {} must be positive", self.alpha)));
        }
        check_factor(self.k)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1_term: f64,
    /// Weighted adversarial term `α (D(fake) − 1)²`.
    pub adv_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub validation: Vec<ValidationRecord>,
}

/// Hooks called by the training loop.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) {}

    fn on_checkpoint(&mut self, _step: usize, _generator: &Generator, _discriminator: &Discriminator) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores every event.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Seeded per-epoch shuffle over dataset indices.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: 0,
            rng: rng_from_seed(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn image_tensor(images: &[&FlimImage]) -> Tensor {
    let f = images[0];
    let samples: Vec<&[f32]> = images.iter().map(|i| i.data()).collect();
    Tensor::stack(&samples, f.num_channels(), f.height(), f.width())
}

fn sigmoid_slope(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Owns both networks and their optimizers; one call to
/// [`step`](Self::step) is one discriminator and one generator update.
pub struct GanTrainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    steps_done: usize,
}

impl GanTrainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator, derive_seed(config.seed, stage::GENERATOR_INIT))?;
        let discriminator = Discriminator::new(
            config.discriminator.clone(),
            derive_seed(config.seed, stage::DISCRIMINATOR_INIT),
        )?;
        Ok(Self {
            opt_g: Adam::new(config.adam, generator.num_params()),
            opt_d: Adam::new(config.adam, discriminator.num_params()),
            config,
            generator,
            discriminator,
            steps_done: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Changes the step size of both optimizers, keeping their moments.
    pub fn set_learning_rate(&mut self, lr: f32) {
        self.config.adam.lr = lr;
        self.opt_g.config.lr = lr;
        self.opt_d.config.lr = lr;
    }

    pub fn step(&mut self, batch: &[&PairedPatch]) -> Result<StepRecord> {
        let first = batch.first().ok_or(Error::EmptyDataset)?;
        for p in batch {
            if p.k != self.config.k {
                return Err(Error::FactorMismatch {
                    expected: self.config.k,
                    found: p.k,
                });
            }
        }
        let (h, w) = (first.hr.image.height(), first.hr.image.width());
        let lr: Vec<&FlimImage> = batch.iter().map(|p| &p.lr.image).collect();
        let hr: Vec<&FlimImage> = batch.iter().map(|p| &p.hr.image).collect();
        let input = resize_tensor(&image_tensor(&lr), h, w);
        let real = image_tensor(&hr);
        let n = batch.len() as f64;
        let alpha = self.config.alpha;

        let (fake, g_cache) = self.generator.forward_train(&input, None)?;
        if !fake.is_finite() {
            return Err(Error::NonFinite);
        }

        // Discriminator step on the detached generator output.
        let (lr_real, c_real) = self.discriminator.forward_train(&real)?;
        let (lr_fake, c_fake) = self.discriminator.forward_train(&fake)?;
        let mut d_loss = 0.0;
        let mut g_real = Vec::with_capacity(batch.len());
        let mut g_fake = Vec::with_capacity(batch.len());
        for (&a, &b) in lr_real.iter().zip(&lr_fake) {
            let (sr, sf) = (sigmoid(a as f64), sigmoid(b as f64));
            d_loss += discriminator_loss(clamp_score(sf), clamp_score(sr));
            g_real.push((2.0 * (sr - 1.0) * sigmoid_slope(sr) / n) as f32);
            g_fake.push((2.0 * sf * sigmoid_slope(sf) / n) as f32);
        }
        d_loss /= n;
        let mut grads_d = vec![0.0f32; self.discriminator.num_params()];
        self.discriminator.backward(&c_real, &g_real, &mut grads_d, false);
        self.discriminator.backward(&c_fake, &g_fake, &mut grads_d, false);
        self.opt_d.step(self.discriminator.params_mut().values_mut(), &grads_d);

        // Generator step through the updated discriminator.
        let (lg, c_gen) = self.discriminator.forward_train(&fake)?;
        let mut adv = 0.0;
        let mut g_logit = Vec::with_capacity(batch.len());
        for &l in &lg {
            let s = sigmoid(l as f64);
            adv += adversarial_term(clamp_score(s));
            g_logit.push((alpha * 2.0 * (s - 1.0) * sigmoid_slope(s) / n) as f32);
        }
        adv /= n;
        grads_d.iter_mut().for_each(|g| *g = 0.0);
        let d_input = self
            .discriminator
            .backward(&c_gen, &g_logit, &mut grads_d, true)
            .expect("discriminator input gradient");
        let l1 = smooth_l1(&fake.data, &real.data)?;
        let mut dy = Tensor::from_vec(fake.n, fake.c, fake.h, fake.w, smooth_l1_grad(&fake.data, &real.data)?);
        dy.data.iter_mut().zip(&d_input.data).for_each(|(a, b)| *a += b);
        let mut grads_g = vec![0.0f32; self.generator.num_params()];
        self.generator.backward(&g_cache, &dy, &mut grads_g, false);
        self.opt_g.step(self.generator.params_mut().values_mut(), &grads_g);

        self.steps_done += 1;
        Ok(StepRecord {
            step: self.steps_done,
            g_loss: l1 + alpha * adv,
            d_loss,
            l1_term: l1,
            adv_term: alpha * adv,
        })
    }
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Mean channel-averaged PSNR and SSIM of the generator on `pairs`,
/// evaluation mode, unit dynamic range.
pub fn validate_generator(generator: &Generator, pairs: &[PairedPatch]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = MetricConstants::default();
    let (mut psnr, mut ss, mut count) = (0.0, 0.0, 0usize);
    for p in pairs {
        let hr = &p.hr.image;
        let (h, w) = (hr.height(), hr.width());
        let pred = generator.forward(&image_tensor(&[&p.lr.image]), (h, w))?;
        for c in 0..hr.num_channels() {
            let a: Vec<f32> = pred.plane(0, c).iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let t = hr.channel(c);
            psnr += psnr_from_mse(crate::metrics::mse(&a, t)?, k.l);
            ss += ssim(&a, t, h, w, &k, SsimMode::Global)?;
            count += 1;
        }
    }
    Ok((psnr / count as f64, ss / count as f64))
}

/// Trains from scratch with no validation set and no observer.
pub fn train(config: &TrainConfig, dataset: &[PairedPatch]) -> Result<(Generator, Discriminator, TrainHistory)> {
    train_with(config, dataset, &[], &mut NoObserver)
}

/// Full training loop with optional validation pairs and event hooks.
pub fn train_with(
    config: &TrainConfig,
    dataset: &[PairedPatch],
    validation: &[PairedPatch],
    observer: &mut dyn TrainObserver,
) -> Result<(Generator, Discriminator, TrainHistory)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(p) = dataset.iter().find(|p| p.k != config.k) {
        return Err(Error::FactorMismatch {
            expected: config.k,
            found: p.k,
        });
    }
    let mut trainer = GanTrainer::new(config.clone())?;
    let mut sampler = EpochSampler::new(dataset.len(), derive_seed(config.seed, stage::DATA_ORDER));
    let mut history = TrainHistory::default();
    for _ in 0..config.steps {
        let idx = sampler.next_batch(config.batch_size);
        let batch: Vec<&PairedPatch> = idx.iter().map(|&i| &dataset[i]).collect();
        let rec = trainer.step(&batch)?;
        observer.on_step(&rec);
        history.steps.push(rec);
        let step = rec.step;
        if config.validation_interval > 0 && step % config.validation_interval == 0 && !validation.is_empty() {
            let (psnr, ssim) = validate_generator(&trainer.generator, validation)?;
            history.validation.push(ValidationRecord { step, psnr, ssim });
        }
        if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 {
            observer.on_checkpoint(step, &trainer.generator, &trainer.discriminator)?;
        }
    }
    Ok((trainer.generator, trainer.discriminator, history))
}

fn segments(len: usize, tile: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..).map(|i| i * tile).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Runs `f` over tiles of a single-sample tensor and stitches the outputs.
///
/// Tiles are `tile×tile` (or the whole axis when shorter); the last tile on
/// each axis is shifted inward so it ends at the border, and later tiles
/// overwrite the overlap. Each tile is edge-padded up to a multiple of
/// `multiple` before `f` sees it.
pub fn run_tiled<F>(x: &Tensor, tile: usize, multiple: usize, out_channels: usize, mut f: F) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if x.n != 1 || tile == 0 || multiple == 0 {
        return Err(Error::InvalidArgument(format!(
            "tiling needs one sample and positive sizes, got n={} tile={tile}",
            x.n
        )));
    }
    let mut out = Tensor::zeros(1, out_channels, x.h, x.w);
    let (th, tw) = (tile.min(x.h), tile.min(x.w));
    let (ph, pw) = (th.div_ceil(multiple) * multiple, tw.div_ceil(multiple) * multiple);
    for &r0 in &segments(x.h, tile) {
        for &c0 in &segments(x.w, tile) {
            let mut t = Tensor::zeros(1, x.c, ph, pw);
            for c in 0..x.c {
                let src = x.plane(0, c);
                let dst = t.plane_mut(0, c);
                for y in 0..ph {
                    let sy = r0 + y.min(th - 1);
                    for xx in 0..pw {
                        dst[y * pw + xx] = src[sy * x.w + c0 + xx.min(tw - 1)];
                    }
                }
            }
            let y = f(&t)?;
            if y.c != out_channels || y.h != ph || y.w != pw {
                return Err(Error::ShapeMismatch(format!(
                    "tile function returned {:?}, expected [1, {out_channels}, {ph}, {pw}]",
                    y.shape()
                )));
            }
            for c in 0..out_channels {
                let src = y.plane(0, c);
                let dst = out.plane_mut(0, c);
                for yy in 0..th {
                    dst[(r0 + yy) * x.w + c0..(r0 + yy) * x.w + c0 + tw].copy_from_slice(&src[yy * pw..yy * pw + tw]);
                }
            }
        }
    }
    Ok(out)
}

pub const DEFAULT_TILE_PX: usize = DEFAULT_PATCH_PX;

/// Super-resolves a raw low-resolution image to `target_hw`.
///
/// The image is clipped and normalized with the training statistics,
/// resized bilinearly to the target, passed tile by tile through the U-Net
/// in evaluation mode and clamped to `[0, 1]`.
pub fn infer(
    generator: &Generator,
    lr: &FlimImage,
    target_hw: (usize, usize),
    stats: Option<&PreprocessStats>,
    tile: usize,
) -> Result<FlimImage> {
    let stats = stats.ok_or(Error::MissingPreprocessingStats)?;
    lr.ensure_finite()?;
    let (th, tw) = target_hw;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument("target dimensions must be positive".into()));
    }
    let norm = stats.apply(lr)?;
    let up = resize_tensor(&image_tensor(&[&norm]), th, tw);
    let cfg = generator.config();
    let y = run_tiled(&up, tile, cfg.size_multiple(), cfg.out_channels, |t| generator.forward_unet(t, None))?;
    let data: Vec<f32> = y.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let pixel = lr.pixel_size_um() * lr.height() as f32 / th as f32;
    lr.with_data(th, tw, pixel, data)
}
