use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::ForwardTrace;
use crate::nn::{
    add_residual, add_residual_backward, avg_pool2, avg_pool2_backward, concat_channels, split_channels,
    upsample2, upsample2_backward, Conv2d, ConvBnRelu, ConvBnReluCache, Linear, ParamStore, Tensor,
};
use crate::resample::ResizePlan;
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

/// U-Net generator architecture.
///
/// Encoder level `i` outputs `base_channels · 2^i` channels; levels are
/// joined by 2×2 average pooling. The decoder runs the same levels in
/// reverse: its deepest block refines the deepest encoder output, every
/// shallower block takes `[encoder skip, bilinear ×2 of the level below]`.
/// A final 3×3 convolution maps to `out_channels`.
///
/// With `time_embed_dim > 0` every level block adds a learned projection of
/// a sinusoidal timestep embedding to its output (diffusion denoiser).
///
/// `residual_gamma_init` is the starting batch-norm scale of the last unit
/// in every block and `zero_head` starts the output convolution at zero.
/// Small residual branches keep the zero-padded input visible through the
/// whole U-Net, which lets the head find a near-identity mapping within a
/// few hundred steps. `1.0` / `false` give plain Kaiming initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub convs_per_block: usize,
    #[serde(default)]
    pub time_embed_dim: usize,
    #[serde(default = "default_residual_gamma")]
    pub residual_gamma_init: f32,
    #[serde(default = "default_zero_head")]
    pub zero_head: bool,
}

pub const DEFAULT_RESIDUAL_GAMMA: f32 = 0.05;

fn default_residual_gamma() -> f32 {
    DEFAULT_RESIDUAL_GAMMA
}

fn default_zero_head() -> bool {
    true
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            out_channels: 6,
            base_channels: 64,
            levels: 4,
            convs_per_block: 3,
            time_embed_dim: 0,
            residual_gamma_init: DEFAULT_RESIDUAL_GAMMA,
            zero_head: true,
        }
    }
}

impl GeneratorConfig {
    pub fn with_base(base_channels: usize, levels: usize) -> Self {
        Self {
            base_channels,
            levels,
            ..Self::default()
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.levels).map(|i| self.base_channels << i).collect()
    }

    /// Spatial dimensions must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.base_channels == 0
            || self.levels == 0
            || self.convs_per_block == 0
            || self.time_embed_dim % 2 == 1
            || !(self.residual_gamma_init.is_finite() && self.residual_gamma_init > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid generator config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LevelBlock {
    units: Vec<ConvBnRelu>,
    time_proj: Option<Linear>,
}

#[derive(Debug, Clone)]
struct LevelCache {
    units: Vec<ConvBnReluCache>,
}

impl LevelBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        params: &mut ParamStore,
        buffers: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        convs: usize,
        time_dim: usize,
    ) -> Self {
        let units = (0..convs)
            .map(|j| {
                let cin = if j == 0 { in_c } else { out_c };
                ConvBnRelu::new(params, buffers, rng, &format!("{name}.unit{j}"), cin, out_c, 1)
            })
            .collect();
        let time_proj = (time_dim > 0).then(|| Linear::new(params, rng, &format!("{name}.time"), time_dim, out_c, 1.0));
        Self { units, time_proj }
    }

    fn add_time(&self, params: &[f32], y: &mut Tensor, emb: Option<&[f32]>) {
        if let (Some(proj), Some(emb)) = (&self.time_proj, emb) {
            let shift = proj.forward(params, emb, y.n);
            for s in 0..y.n {
                for c in 0..y.c {
                    let b = shift[s * y.c + c];
                    y.plane_mut(s, c).iter_mut().for_each(|v| *v += b);
                }
            }
        }
    }

    fn forward_train(
        &self,
        params: &[f32],
        buffers: &mut [f32],
        x: Tensor,
        emb: Option<&[f32]>,
    ) -> (Tensor, LevelCache) {
        let mut caches = Vec::with_capacity(self.units.len());
        let mut h = x.clone();
        for unit in &self.units {
            let (out, cache) = unit.forward_train(params, buffers, h);
            caches.push(cache);
            h = out;
        }
        add_residual(&mut h, &x);
        self.add_time(params, &mut h, emb);
        (h, LevelCache { units: caches })
    }

    fn forward_eval(&self, params: &[f32], buffers: &[f32], x: &Tensor, emb: Option<&[f32]>) -> Tensor {
        let mut h = self.units[0].forward_eval(params, buffers, x);
        for unit in &self.units[1..] {
            h = unit.forward_eval(params, buffers, &h);
        }
        add_residual(&mut h, x);
        self.add_time(params, &mut h, emb);
        h
    }

    fn backward(
        &self,
        params: &[f32],
        grads: &mut [f32],
        cache: &LevelCache,
        dy: Tensor,
        emb: Option<&[f32]>,
        need_dx: bool,
    ) -> Option<Tensor> {
        if let (Some(proj), Some(emb)) = (&self.time_proj, emb) {
            let mut dshift = vec![0.0f32; dy.n * dy.c];
            for s in 0..dy.n {
                for c in 0..dy.c {
                    dshift[s * dy.c + c] = dy.plane(s, c).iter().sum();
                }
            }
            proj.backward(params, grads, emb, &dshift, dy.n);
        }
        let mut d = dy.clone();
        for (j, (unit, c)) in self.units.iter().zip(&cache.units).enumerate().rev() {
            d = unit.backward(params, grads, c, d, j > 0 || need_dx)?;
        }
        add_residual_backward(&dy, &mut d);
        Some(d)
    }
}

/// Forward-pass state kept for [`Generator::backward`].
#[derive(Debug, Clone)]
pub struct GeneratorCache {
    enc: Vec<LevelCache>,
    dec: Vec<LevelCache>,
    widths: Vec<usize>,
    head_input: Tensor,
    emb: Option<Vec<f32>>,
}

/// Generator network: architecture constants plus learnable parameters and
/// batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    buffers: ParamStore,
    encoder: Vec<LevelBlock>,
    decoder: Vec<LevelBlock>,
    head: Conv2d,
}

/// Sinusoidal timestep embedding, `[sin(t·f_i), cos(t·f_i)]` with
/// `f_i = 10000^(−i/(d/2))`.
pub fn timestep_embedding(steps: &[usize], dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; steps.len() * dim];
    for (row, &t) in out.chunks_mut(dim).zip(steps) {
        for i in 0..half {
            let freq = (-(10000.0f64).ln() * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            row[i] = arg.sin() as f32;
            row[half + i] = arg.cos() as f32;
        }
    }
    out
}

impl Generator {
    /// Builds the network with seeded Kaiming initialization, then applies
    /// the residual-scale and output-layer settings of the config.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let widths = config.widths();
        let td = config.time_embed_dim;
        let encoder: Vec<LevelBlock> = (0..config.levels)
            .map(|i| {
                let in_c = if i == 0 { config.in_channels } else { widths[i - 1] };
                LevelBlock::new(
                    &mut params,
                    &mut buffers,
                    &mut rng,
                    &format!("enc{i}"),
                    in_c,
                    widths[i],
                    config.convs_per_block,
                    td,
                )
            })
            .collect();
        let decoder = (0..config.levels)
            .rev()
            .map(|i| {
                let in_c = if i + 1 == config.levels { widths[i] } else { widths[i] + widths[i + 1] };
                LevelBlock::new(
                    &mut params,
                    &mut buffers,
                    &mut rng,
                    &format!("dec{i}"),
                    in_c,
                    widths[i],
                    config.convs_per_block,
                    td,
                )
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let head = Conv2d::new(&mut params, &mut rng, "head", widths[0], config.out_channels, 1, true);
        let last = config.convs_per_block - 1;
        for block in encoder.iter().chain(&decoder) {
            block.units[last].bn.gamma.of_mut(params.values_mut()).fill(config.residual_gamma_init);
        }
        if config.zero_head {
            head.weight.of_mut(params.values_mut()).fill(0.0);
        }
        Ok(Self {
            config,
            params,
            buffers,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore {
        &mut self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Checks a U-Net input (already at output resolution).
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {} channels, got {}",
                self.config.in_channels, x.c
            )));
        }
        let m = self.config.size_multiple();
        if x.h % m != 0 || x.w % m != 0 || x.h == 0 || x.w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "generator spatial dims {}x{} must be positive multiples of {m}",
                x.h, x.w
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn embedding(&self, steps: Option<&[usize]>, n: usize) -> Result<Option<Vec<f32>>> {
        match (self.config.time_embed_dim, steps) {
            (0, _) => Ok(None),
            (d, Some(t)) if t.len() == n => Ok(Some(timestep_embedding(t, d))),
            _ => Err(Error::InvalidArgument("time-conditioned generator needs one step per sample".into())),
        }
    }

    /// Training-mode pass: batch statistics, running averages updated.
    pub fn forward_train(&mut self, x: &Tensor, steps: Option<&[usize]>) -> Result<(Tensor, GeneratorCache)> {
        self.check_input(x)?;
        let emb = self.embedding(steps, x.n)?;
        let emb_ref = emb.as_deref();
        let params = self.params.values();
        let buffers = self.buffers.values_mut();
        let levels = self.config.levels;
        let mut enc_caches = Vec::with_capacity(levels);
        let mut skips: Vec<Tensor> = Vec::with_capacity(levels);
        let mut h = x.clone();
        for (i, block) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = avg_pool2(skips.last().expect("previous level"));
            }
            let (out, cache) = block.forward_train(params, buffers, h, emb_ref);
            enc_caches.push(cache);
            skips.push(out.clone());
            h = out;
        }
        let mut dec_caches: Vec<Option<LevelCache>> = (0..levels).map(|_| None).collect();
        let (mut d, cache) = self.decoder[levels - 1].forward_train(params, buffers, h, emb_ref);
        dec_caches[levels - 1] = Some(cache);
        for i in (0..levels - 1).rev() {
            let cat = concat_channels(&skips[i], &upsample2(&d));
            let (out, cache) = self.decoder[i].forward_train(params, buffers, cat, emb_ref);
            dec_caches[i] = Some(cache);
            d = out;
        }
        let y = self.head.forward(params, &d);
        let cache = GeneratorCache {
            enc: enc_caches,
            dec: dec_caches.into_iter().map(|c| c.expect("decoder cache")).collect(),
            widths: self.config.widths(),
            head_input: d,
            emb,
        };
        Ok((y, cache))
    }

    /// Evaluation-mode pass through the U-Net (input already at output size).
    pub fn forward_unet(&self, x: &Tensor, steps: Option<&[usize]>) -> Result<Tensor> {
        self.check_input(x)?;
        let emb = self.embedding(steps, x.n)?;
        let emb = emb.as_deref();
        let params = self.params.values();
        let buffers = self.buffers.values();
        let levels = self.config.levels;
        let mut skips: Vec<Tensor> = Vec::with_capacity(levels);
        for (i, block) in self.encoder.iter().enumerate() {
            let out = if i == 0 {
                block.forward_eval(params, buffers, x, emb)
            } else {
                block.forward_eval(params, buffers, &avg_pool2(&skips[i - 1]), emb)
            };
            skips.push(out);
        }
        let mut d = self.decoder[levels - 1].forward_eval(params, buffers, &skips[levels - 1], emb);
        for i in (0..levels - 1).rev() {
            let cat = concat_channels(&skips[i], &upsample2(&d));
            d = self.decoder[i].forward_eval(params, buffers, &cat, emb);
        }
        Ok(self.head.forward(params, &d))
    }

    /// Bilinear front end to `target`, then the U-Net in evaluation mode.
    pub fn forward(&self, lr: &Tensor, target: (usize, usize)) -> Result<Tensor> {
        if !lr.is_finite() {
            return Err(Error::NonFinite);
        }
        self.forward_unet(&resize_tensor(lr, target.0, target.1), None)
    }

    /// Backward pass; accumulates into `grads` (length [`num_params`](Self::num_params)).
    pub fn backward(&self, cache: &GeneratorCache, dy: &Tensor, grads: &mut [f32], need_dx: bool) -> Option<Tensor> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        let params = self.params.values();
        let emb = cache.emb.as_deref();
        let levels = self.config.levels;
        let widths = &cache.widths;
        let mut gd = self
            .head
            .backward(params, grads, &cache.head_input, dy, true)
            .expect("head input grad");
        let mut genc: Vec<Option<Tensor>> = (0..levels).map(|_| None).collect();
        for i in 0..levels - 1 {
            let gcat = self.decoder[i]
                .backward(params, grads, &cache.dec[i], gd, emb, true)
                .expect("decoder grad");
            let (gskip, gup) = split_channels(&gcat, widths[i]);
            genc[i] = Some(gskip);
            gd = upsample2_backward(&gup);
        }
        let gdeep = self.decoder[levels - 1]
            .backward(params, grads, &cache.dec[levels - 1], gd, emb, true)
            .expect("decoder grad");
        genc[levels - 1] = Some(gdeep);
        let mut dx = None;
        for i in (0..levels).rev() {
            let g = genc[i].take().expect("encoder grad");
            let want = i > 0 || need_dx;
            let gin = self.encoder[i].backward(params, grads, &cache.enc[i], g, emb, want);
            if i > 0 {
                let back = avg_pool2_backward(&gin.expect("encoder input grad"));
                let acc = genc[i - 1].as_mut().expect("skip grad");
                acc.data.iter_mut().zip(&back.data).for_each(|(a, b)| *a += b);
            } else {
                dx = gin;
            }
        }
        dx
    }

    /// Layer output shapes for an input of `h×w` at output resolution.
    pub fn trace(&self, n: usize, h: usize, w: usize) -> ForwardTrace {
        let mut t = ForwardTrace::default();
        let widths = self.config.widths();
        let (mut hh, mut ww) = (h, w);
        t.push("input", [n, self.config.in_channels, h, w]);
        for (i, &c) in widths.iter().enumerate() {
            if i > 0 {
                hh /= 2;
                ww /= 2;
            }
            t.push(format!("enc{i}"), [n, c, hh, ww]);
        }
        t.push(format!("dec{}", self.config.levels - 1), [n, widths[self.config.levels - 1], hh, ww]);
        for i in (0..self.config.levels - 1).rev() {
            hh *= 2;
            ww *= 2;
            t.push(format!("dec{i}"), [n, widths[i], hh, ww]);
        }
        t.push("head", [n, self.config.out_channels, hh, ww]);
        t
    }
}

/// Resizes every plane of a batch with half-pixel bilinear interpolation.
pub fn resize_tensor(x: &Tensor, h: usize, w: usize) -> Tensor {
    if x.h == h && x.w == w {
        return x.clone();
    }
    let plan = ResizePlan::new(x.h, x.w, h, w);
    let mut y = Tensor::zeros(x.n, x.c, h, w);
    for s in 0..x.n {
        for c in 0..x.c {
            plan.apply(x.plane(s, c), y.plane_mut(s, c));
        }
    }
    y
}
