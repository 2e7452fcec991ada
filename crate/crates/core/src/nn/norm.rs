use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;

use super::param::{ParamRef, ParamStore};
use super::tensor::Tensor;

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;

/// Per-channel batch normalization.
///
/// Training mode normalizes with batch statistics (biased variance) and
/// folds them into running averages with the unbiased variance; evaluation
/// mode uses the running averages only.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: ParamRef,
    pub beta: ParamRef,
    pub running_mean: ParamRef,
    pub running_var: ParamRef,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(params: &mut ParamStore, buffers: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = params.alloc(format!("{name}.gamma"), &[channels]);
        gamma.of_mut(params.values_mut()).fill(1.0);
        let beta = params.alloc(format!("{name}.beta"), &[channels]);
        let running_mean = buffers.alloc(format!("{name}.running_mean"), &[channels]);
        let running_var = buffers.alloc(format!("{name}.running_var"), &[channels]);
        running_var.of_mut(buffers.values_mut()).fill(1.0);
        Self {
            channels,
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn forward_train(&self, params: &[f32], buffers: &mut [f32], x: &Tensor) -> (Tensor, BnCache) {
        assert_eq!(x.c, self.channels, "batch norm channels");
        let count = x.n * x.plane_len();
        let gamma = self.gamma.of(params);
        let beta = self.beta.of(params);
        let mut xhat = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut inv_std = vec![0.0f32; x.c];
        for c in 0..x.c {
            let mut sum = 0.0f64;
            for s in 0..x.n {
                sum += x.plane(s, c).iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for s in 0..x.n {
                sq += x.plane(s, c).iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
            }
            let var = sq / count as f64;
            let istd = 1.0 / (var + BN_EPS as f64).sqrt();
            inv_std[c] = istd as f32;
            for s in 0..x.n {
                let src = x.plane(s, c);
                let xh = xhat.plane_mut(s, c);
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = ((v as f64 - mean) * istd) as f32;
                }
                let (g, b) = (gamma[c], beta[c]);
                for (o, &h) in y.plane_mut(s, c).iter_mut().zip(xhat.plane(s, c)) {
                    *o = g * h + b;
                }
            }
            let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
            let rm = &mut self.running_mean.of_mut(buffers)[c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean as f32;
            let rv = &mut self.running_var.of_mut(buffers)[c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, params: &[f32], buffers: &[f32], x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.channels, "batch norm channels");
        let gamma = self.gamma.of(params);
        let beta = self.beta.of(params);
        let mean = self.running_mean.of(buffers);
        let var = self.running_var.of(buffers);
        let mut y = x.clone();
        for c in 0..x.c {
            let scale = gamma[c] / (var[c] + BN_EPS).sqrt();
            let shift = beta[c] - mean[c] * scale;
            for s in 0..x.n {
                y.plane_mut(s, c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    pub fn backward(&self, params: &[f32], grads: &mut [f32], cache: &BnCache, dy: &Tensor) -> Tensor {
        let xhat = &cache.xhat;
        assert!(xhat.same_shape(dy), "batch norm grad shape");
        let count = (dy.n * dy.plane_len()) as f64;
        let gamma = self.gamma.of(params);
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..dy.c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for s in 0..dy.n {
                for (&g, &h) in dy.plane(s, c).iter().zip(xhat.plane(s, c)) {
                    sum_dy += g as f64;
                    sum_dy_xhat += g as f64 * h as f64;
                }
            }
            self.gamma.of_mut(grads)[c] += sum_dy_xhat as f32;
            self.beta.of_mut(grads)[c] += sum_dy as f32;
            // The bracket cancels almost exactly when dy is nearly uniform,
            // so it is formed in f64.
            let k = gamma[c] as f64 * cache.inv_std[c] as f64;
            let mean_dy = sum_dy / count;
            let mean_dy_xhat = sum_dy_xhat / count;
            for s in 0..dy.n {
                let out = dx.plane_mut(s, c);
                for ((o, &g), &h) in out.iter_mut().zip(dy.plane(s, c)).zip(xhat.plane(s, c)) {
                    *o = (k * (g as f64 - mean_dy - h as f64 * mean_dy_xhat)) as f32;
                }
            }
        }
        dx
    }
}
