use alloc::format;
use alloc::vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;

use super::conv::Conv2d;
use super::gemm::gemm;
use super::norm::{BatchNorm2d, BnCache};
use super::param::{ParamRef, ParamStore};
use super::tensor::Tensor;
use crate::resample::ResizePlan;
use crate::rng::{fill_normal, Rng};

pub fn relu_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `dy` masked by `out > 0`, where `out` is the ReLU output.
pub fn relu_backward(out: &Tensor, mut dy: Tensor) -> Tensor {
    for (g, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
    dy
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Convolution (no bias), batch normalization, ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

#[derive(Debug, Clone)]
pub struct ConvBnReluCache {
    input: Tensor,
    conv_out: Tensor,
    bn: BnCache,
    out: Tensor,
}

impl ConvBnReluCache {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamStore,
        buffers: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
    ) -> Self {
        let conv = Conv2d::new(params, rng, &format!("{name}.conv"), in_c, out_c, stride, false);
        let bn = BatchNorm2d::new(params, buffers, &format!("{name}.bn"), out_c);
        Self { conv, bn }
    }

    pub fn param_count(in_c: usize, out_c: usize) -> usize {
        Conv2d::param_count(in_c, out_c, false) + 2 * out_c
    }

    pub fn forward_train(&self, params: &[f32], buffers: &mut [f32], x: Tensor) -> (Tensor, ConvBnReluCache) {
        let conv_out = self.conv.forward(params, &x);
        let (mut y, bn) = self.bn.forward_train(params, buffers, &conv_out);
        relu_inplace(&mut y);
        let cache = ConvBnReluCache {
            input: x,
            conv_out,
            bn,
            out: y.clone(),
        };
        (y, cache)
    }

    pub fn forward_eval(&self, params: &[f32], buffers: &[f32], x: &Tensor) -> Tensor {
        let mut y = self.bn.forward_eval(params, buffers, &self.conv.forward(params, x));
        relu_inplace(&mut y);
        y
    }

    pub fn backward(
        &self,
        params: &[f32],
        grads: &mut [f32],
        cache: &ConvBnReluCache,
        dy: Tensor,
        need_dx: bool,
    ) -> Option<Tensor> {
        let d = relu_backward(&cache.out, dy);
        let d = self.bn.backward(params, grads, &cache.bn, &d);
        debug_assert!(d.same_shape(&cache.conv_out));
        self.conv.backward(params, grads, &cache.input, &d, need_dx)
    }
}

/// Fully connected layer on `N×in` row-major input.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: ParamRef,
    pub bias: ParamRef,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, in_f: usize, out_f: usize, gain: f32) -> Self {
        let weight = store.alloc(format!("{name}.weight"), &[out_f, in_f]);
        fill_normal(rng, weight.of_mut(store.values_mut()), gain / (in_f as f32).sqrt());
        let bias = store.alloc(format!("{name}.bias"), &[out_f]);
        Self {
            in_f,
            out_f,
            weight,
            bias,
        }
    }

    pub fn param_count(in_f: usize, out_f: usize) -> usize {
        in_f * out_f + out_f
    }

    pub fn forward(&self, params: &[f32], x: &[f32], n: usize) -> alloc::vec::Vec<f32> {
        assert_eq!(x.len(), n * self.in_f, "linear input");
        let mut y = vec![0.0; n * self.out_f];
        for row in y.chunks_mut(self.out_f) {
            row.copy_from_slice(self.bias.of(params));
        }
        gemm(
            n,
            self.in_f,
            self.out_f,
            1.0,
            x,
            (self.in_f, 1),
            self.weight.of(params),
            (1, self.in_f),
            1.0,
            &mut y,
            (self.out_f, 1),
        );
        y
    }

    pub fn backward(&self, params: &[f32], grads: &mut [f32], x: &[f32], dy: &[f32], n: usize) -> alloc::vec::Vec<f32> {
        gemm(
            self.out_f,
            n,
            self.in_f,
            1.0,
            dy,
            (1, self.out_f),
            x,
            (self.in_f, 1),
            1.0,
            self.weight.of_mut(grads),
            (self.in_f, 1),
        );
        let gb = self.bias.of_mut(grads);
        for row in dy.chunks(self.out_f) {
            gb.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
        let mut dx = vec![0.0; n * self.in_f];
        gemm(
            n,
            self.out_f,
            self.in_f,
            1.0,
            dy,
            (self.out_f, 1),
            self.weight.of(params),
            (self.in_f, 1),
            0.0,
            &mut dx,
            (self.in_f, 1),
        );
        dx
    }
}

/// 2×2 average pooling with stride 2; dimensions must be even.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "avg_pool2 needs even dims, got {}x{}", x.h, x.w);
    let (ho, wo) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, ho, wo);
    for s in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(s, c);
            let dst = y.plane_mut(s, c);
            for oy in 0..ho {
                let r0 = &src[2 * oy * x.w..(2 * oy + 1) * x.w];
                let r1 = &src[(2 * oy + 1) * x.w..(2 * oy + 2) * x.w];
                for ox in 0..wo {
                    dst[oy * wo + ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
                }
            }
        }
    }
    y
}

pub fn avg_pool2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for s in 0..dy.n {
        for c in 0..dy.c {
            let g = dy.plane(s, c);
            let dst = dx.plane_mut(s, c);
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = 0.25 * g[(y / 2) * dy.w + x / 2];
                }
            }
        }
    }
    dx
}

/// Bilinear ×2 upsampling with half-pixel alignment.
pub fn upsample2(x: &Tensor) -> Tensor {
    let plan = ResizePlan::new(x.h, x.w, 2 * x.h, 2 * x.w);
    let mut y = Tensor::zeros(x.n, x.c, 2 * x.h, 2 * x.w);
    for s in 0..x.n {
        for c in 0..x.c {
            plan.apply(x.plane(s, c), y.plane_mut(s, c));
        }
    }
    y
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let plan = ResizePlan::new(dy.h / 2, dy.w / 2, dy.h, dy.w);
    let mut dx = Tensor::zeros(dy.n, dy.c, dy.h / 2, dy.w / 2);
    for s in 0..dy.n {
        for c in 0..dy.c {
            plan.adjoint(dy.plane(s, c), dx.plane_mut(s, c));
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    assert!(a.n == b.n && a.h == b.h && a.w == b.w, "concat shape");
    let mut y = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    for s in 0..a.n {
        let dst = y.sample_mut(s);
        dst[..a.sample_len()].copy_from_slice(a.sample(s));
        dst[a.sample_len()..].copy_from_slice(b.sample(s));
    }
    y
}

/// Splits a gradient of `[a, b]` back into its first `a_c` channels and the rest.
pub fn split_channels(d: &Tensor, a_c: usize) -> (Tensor, Tensor) {
    let mut da = Tensor::zeros(d.n, a_c, d.h, d.w);
    let mut db = Tensor::zeros(d.n, d.c - a_c, d.h, d.w);
    let cut = a_c * d.plane_len();
    for s in 0..d.n {
        da.sample_mut(s).copy_from_slice(&d.sample(s)[..cut]);
        db.sample_mut(s).copy_from_slice(&d.sample(s)[cut..]);
    }
    (da, db)
}

/// Adds `input` to `out` with the channel dimension zero-padded (or cut)
/// to `out.c`: the first `min(input.c, out.c)` channels line up.
pub fn add_residual(out: &mut Tensor, input: &Tensor) {
    assert!(out.n == input.n && out.h == input.h && out.w == input.w, "residual shape");
    let m = out.c.min(input.c) * out.plane_len();
    for s in 0..out.n {
        let src = &input.sample(s)[..m];
        out.sample_mut(s)[..m].iter_mut().zip(src).for_each(|(o, v)| *o += v);
    }
}

/// Adds the residual path's share of `dout` into `dinput`.
pub fn add_residual_backward(dout: &Tensor, dinput: &mut Tensor) {
    let m = dout.c.min(dinput.c) * dout.plane_len();
    for s in 0..dout.n {
        let src = &dout.sample(s)[..m];
        dinput.sample_mut(s)[..m].iter_mut().zip(src).for_each(|(o, v)| *o += v);
    }
}

fn adaptive_bins(len: usize, out: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..out).map(move |i| ((i * len) / out, ((i + 1) * len).div_ceil(out)))
}

/// Adaptive average pooling to `oh×ow` with floor/ceil bin edges.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    for s in 0..x.n {
        for c in 0..x.c {
            let src = x.plane(s, c);
            let dst = y.plane_mut(s, c);
            for (oy, (y0, y1)) in adaptive_bins(x.h, oh).enumerate() {
                for (ox, (x0, x1)) in adaptive_bins(x.w, ow).enumerate() {
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        acc += src[yy * x.w + x0..yy * x.w + x1].iter().sum::<f32>();
                    }
                    dst[oy * ow + ox] = acc / ((y1 - y0) * (x1 - x0)) as f32;
                }
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for s in 0..dy.n {
        for c in 0..dy.c {
            let g = dy.plane(s, c);
            let dst = dx.plane_mut(s, c);
            for (oy, (y0, y1)) in adaptive_bins(h, dy.h).enumerate() {
                for (ox, (x0, x1)) in adaptive_bins(w, dy.w).enumerate() {
                    let share = g[oy * dy.w + ox] / ((y1 - y0) * (x1 - x0)) as f32;
                    for yy in y0..y1 {
                        dst[yy * w + x0..yy * w + x1].iter_mut().for_each(|v| *v += share);
                    }
                }
            }
        }
    }
    dx
}
