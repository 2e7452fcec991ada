use alloc::format;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::ForwardTrace;
use crate::nn::{
    adaptive_avg_pool, adaptive_avg_pool_backward, relu_backward, relu_inplace, sigmoid, Conv2d, ConvBnRelu,
    ConvBnReluCache, Linear, ParamStore, Tensor,
};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Strided convolutional discriminator.
///
/// A 3×3 stem maps the input to `base_channels`, then each block applies a
/// channel-preserving convolution and a stride-2 convolution that doubles
/// the channels. The head averages the final map down to
/// `pooled × pooled`, then runs two fully connected layers to one logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub blocks: usize,
    pub pooled: usize,
    pub fc_hidden: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 6,
            base_channels: 64,
            blocks: 5,
            pooled: 4,
            fc_hidden: 1024,
        }
    }
}

impl DiscriminatorConfig {
    pub fn with_base(base_channels: usize) -> Self {
        Self {
            base_channels,
            ..Self::default()
        }
    }

    /// Channel widths after each block.
    pub fn block_widths(&self) -> Vec<usize> {
        (1..=self.blocks).map(|b| self.base_channels << b).collect()
    }

    pub fn size_multiple(&self) -> usize {
        1 << self.blocks
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache {
    input: Tensor,
    stem_out: Tensor,
    blocks: Vec<(ConvBnReluCache, ConvBnReluCache)>,
    last_shape: [usize; 4],
    pooled: Tensor,
    hidden: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    buffers: ParamStore,
    stem: Conv2d,
    blocks: Vec<(ConvBnRelu, ConvBnRelu)>,
    fc1: Linear,
    fc2: Linear,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.in_channels == 0 || config.base_channels == 0 || config.pooled == 0 || config.fc_hidden == 0 {
            return Err(Error::InvalidArgument(format!("invalid discriminator config {config:?}")));
        }
        let mut rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let stem = Conv2d::new(&mut params, &mut rng, "stem", config.in_channels, config.base_channels, 1, true);
        let mut c = config.base_channels;
        let blocks = (0..config.blocks)
            .map(|b| {
                let keep = ConvBnRelu::new(&mut params, &mut buffers, &mut rng, &format!("block{b}.keep"), c, c, 1);
                let down = ConvBnRelu::new(&mut params, &mut buffers, &mut rng, &format!("block{b}.down"), c, 2 * c, 2);
                c *= 2;
                (keep, down)
            })
            .collect();
        let flat = c * config.pooled * config.pooled;
        let fc1 = Linear::new(&mut params, &mut rng, "fc1", flat, config.fc_hidden, 2.0f32.sqrt());
        let fc2 = Linear::new(&mut params, &mut rng, "fc2", config.fc_hidden, 1, 1.0);
        Ok(Self {
            config,
            params,
            buffers,
            stem,
            blocks,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
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

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects {} channels, got {}",
                self.config.in_channels, x.c
            )));
        }
        let m = self.config.size_multiple();
        if x.h == 0 || x.w == 0 || x.h % m != 0 || x.w % m != 0 {
            return Err(Error::ShapeMismatch(format!(
                "discriminator input {}x{} must be a positive multiple of {m}",
                x.h, x.w
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Training-mode pass returning one logit per sample.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Vec<f32>, DiscriminatorCache)> {
        self.check_input(x)?;
        let params = self.params.values();
        let buffers = self.buffers.values_mut();
        let mut stem_out = self.stem.forward(params, x);
        relu_inplace(&mut stem_out);
        let mut h = stem_out.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (keep, down) in &self.blocks {
            let (a, ca) = keep.forward_train(params, buffers, h);
            let (b, cb) = down.forward_train(params, buffers, a);
            caches.push((ca, cb));
            h = b;
        }
        let last_shape = h.shape();
        let pooled = adaptive_avg_pool(&h, self.config.pooled, self.config.pooled);
        let mut hidden = self.fc1.forward(params, &pooled.data, x.n);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = self.fc2.forward(params, &hidden, x.n);
        let cache = DiscriminatorCache {
            input: x.clone(),
            stem_out,
            blocks: caches,
            last_shape,
            pooled,
            hidden,
        };
        Ok((logits, cache))
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f32>> {
        self.check_input(x)?;
        let params = self.params.values();
        let buffers = self.buffers.values();
        let mut h = self.stem.forward(params, x);
        relu_inplace(&mut h);
        for (keep, down) in &self.blocks {
            h = down.forward_eval(params, buffers, &keep.forward_eval(params, buffers, &h));
        }
        let pooled = adaptive_avg_pool(&h, self.config.pooled, self.config.pooled);
        let mut hidden = self.fc1.forward(params, &pooled.data, x.n);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(self.fc2.forward(params, &hidden, x.n))
    }

    /// Evaluation-mode probability of "real", strictly inside (0, 1).
    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(|l| score_from_logit(l as f64)).collect())
    }

    /// Backward from per-sample logit gradients.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        dlogits: &[f32],
        grads: &mut [f32],
        need_dx: bool,
    ) -> Option<Tensor> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        let params = self.params.values();
        let n = cache.input.n;
        let mut dh = self.fc2.backward(params, grads, &cache.hidden, dlogits, n);
        for (g, &h) in dh.iter_mut().zip(&cache.hidden) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let dpool = self.fc1.backward(params, grads, &cache.pooled.data, &dh, n);
        let p = self.config.pooled;
        let dpool = Tensor::from_vec(n, cache.pooled.c, p, p, dpool);
        let [_, _, lh, lw] = cache.last_shape;
        let mut d = adaptive_avg_pool_backward(&dpool, lh, lw);
        for ((keep, down), (ca, cb)) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = down.backward(params, grads, cb, d, true).expect("block grad");
            d = keep.backward(params, grads, ca, d, true).expect("block grad");
        }
        let d = relu_backward(&cache.stem_out, d);
        self.stem.backward(params, grads, &cache.input, &d, need_dx)
    }

    pub fn trace(&self, n: usize, h: usize, w: usize) -> ForwardTrace {
        let mut t = ForwardTrace::default();
        t.push("input", [n, self.config.in_channels, h, w]);
        t.push("stem", [n, self.config.base_channels, h, w]);
        let (mut hh, mut ww) = (h, w);
        for (b, c) in self.config.block_widths().into_iter().enumerate() {
            hh = (hh - 1) / 2 + 1;
            ww = (ww - 1) / 2 + 1;
            t.push(format!("block{b}"), [n, c, hh, ww]);
        }
        let c = self.config.base_channels << self.config.blocks;
        t.push("pool", [n, c, self.config.pooled, self.config.pooled]);
        t.push("fc1", [n, self.config.fc_hidden, 1, 1]);
        t.push("fc2", [n, 1, 1, 1]);
        t
    }
}

/// Sigmoid kept strictly inside (0, 1) even when it saturates in f64.
pub fn score_from_logit(logit: f64) -> f64 {
    sigmoid(logit).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}
