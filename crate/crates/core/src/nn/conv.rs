use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;

use super::gemm::gemm;
use super::param::{ParamRef, ParamStore};
use super::tensor::Tensor;
use crate::rng::{fill_normal, Rng};

/// Upper bound on im2col scratch, in floats. Larger outputs are processed
/// in horizontal bands.
const COL_BUDGET: usize = 1 << 22;

/// 3×3 convolution with zero padding 1 and stride 1 or 2.
///
/// Weights are `[out_c][in_c][3][3]`, initialized Kaiming-normal with
/// fan-in `in_c · 9`; biases start at zero.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub weight: ParamRef,
    pub bias: Option<ParamRef>,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        assert!(stride == 1 || stride == 2, "unsupported stride {stride}");
        let weight = store.alloc(format!("{name}.weight"), &[out_c, in_c, 3, 3]);
        let std = (2.0 / (in_c * 9) as f32).sqrt();
        fill_normal(rng, weight.of_mut(store.values_mut()), std);
        let bias = bias.then(|| store.alloc(format!("{name}.bias"), &[out_c]));
        Self {
            in_c,
            out_c,
            stride,
            weight,
            bias,
        }
    }

    pub fn param_count(in_c: usize, out_c: usize, bias: bool) -> usize {
        out_c * in_c * 9 + if bias { out_c } else { 0 }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn kdim(&self) -> usize {
        self.in_c * 9
    }

    fn band_rows(&self, ho: usize, wo: usize) -> usize {
        (COL_BUDGET / (self.kdim() * wo)).clamp(1, ho)
    }

    pub fn forward(&self, params: &[f32], x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (ho, wo) = self.out_dims(x.h, x.w);
        let mut y = Tensor::zeros(x.n, self.out_c, ho, wo);
        let k = self.kdim();
        let w = self.weight.of(params);
        let band = self.band_rows(ho, wo);
        let mut col = vec![0.0f32; k * band * wo];
        for s in 0..x.n {
            let xs = x.sample(s);
            let ys = y.sample_mut(s);
            let mut r0 = 0;
            while r0 < ho {
                let rb = band.min(ho - r0);
                let l = rb * wo;
                let col = &mut col[..k * l];
                im2col(xs, self.in_c, x.h, x.w, self.stride, r0, rb, wo, col);
                gemm(
                    self.out_c,
                    k,
                    l,
                    1.0,
                    w,
                    (k, 1),
                    col,
                    (l, 1),
                    0.0,
                    &mut ys[r0 * wo..],
                    (ho * wo, 1),
                );
                r0 += rb;
            }
            if let Some(b) = self.bias {
                for (co, &bv) in b.of(params).iter().enumerate() {
                    ys[co * ho * wo..(co + 1) * ho * wo]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients into `grads` and returns the input
    /// gradient when `need_dx` is set.
    pub fn backward(
        &self,
        params: &[f32],
        grads: &mut [f32],
        x: &Tensor,
        dy: &Tensor,
        need_dx: bool,
    ) -> Option<Tensor> {
        let (ho, wo) = self.out_dims(x.h, x.w);
        assert_eq!(dy.shape(), [x.n, self.out_c, ho, wo], "conv grad shape");
        let k = self.kdim();
        let w = self.weight.of(params);
        let band = self.band_rows(ho, wo);
        let mut col = vec![0.0f32; k * band * wo];
        let mut dcol = if need_dx { vec![0.0f32; k * band * wo] } else { Vec::new() };
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        for s in 0..x.n {
            let xs = x.sample(s);
            let dys = dy.sample(s);
            let mut r0 = 0;
            while r0 < ho {
                let rb = band.min(ho - r0);
                let l = rb * wo;
                let col = &mut col[..k * l];
                im2col(xs, self.in_c, x.h, x.w, self.stride, r0, rb, wo, col);
                let dyb = &dys[r0 * wo..];
                gemm(
                    self.out_c,
                    l,
                    k,
                    1.0,
                    dyb,
                    (ho * wo, 1),
                    col,
                    (1, l),
                    1.0,
                    self.weight.of_mut(grads),
                    (k, 1),
                );
                if let Some(dx) = dx.as_mut() {
                    let dcol = &mut dcol[..k * l];
                    gemm(
                        k,
                        self.out_c,
                        l,
                        1.0,
                        w,
                        (1, k),
                        dyb,
                        (ho * wo, 1),
                        0.0,
                        dcol,
                        (l, 1),
                    );
                    col2im(dcol, self.in_c, x.h, x.w, self.stride, r0, rb, wo, dx.sample_mut(s));
                }
                r0 += rb;
            }
            if let Some(b) = self.bias {
                let gb = b.of_mut(grads);
                for (co, g) in gb.iter_mut().enumerate() {
                    *g += dys[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f32>();
                }
            }
        }
        dx
    }
}

/// Column matrix for output rows `r0..r0+rb`: row `(ci, ky, kx)`, column
/// `(oy, ox)` holds `x[ci][oy·s + ky − 1][ox·s + kx − 1]` or zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    in_c: usize,
    h: usize,
    w: usize,
    stride: usize,
    r0: usize,
    rb: usize,
    wo: usize,
    col: &mut [f32],
) {
    let l = rb * wo;
    for ci in 0..in_c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 3 + ky) * 3 + kx) * l..][..l];
                for oy in 0..rb {
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    let iy = ((r0 + oy) * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        match kx {
                            0 => {
                                dst[0] = 0.0;
                                dst[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => dst.copy_from_slice(src),
                            _ => {
                                dst[..w - 1].copy_from_slice(&src[1..]);
                                dst[w - 1] = 0.0;
                            }
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `dx`.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &[f32],
    in_c: usize,
    h: usize,
    w: usize,
    stride: usize,
    r0: usize,
    rb: usize,
    wo: usize,
    dx: &mut [f32],
) {
    let l = rb * wo;
    for ci in 0..in_c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((ci * 3 + ky) * 3 + kx) * l..][..l];
                for oy in 0..rb {
                    let iy = ((r0 + oy) * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let g = &row[oy * wo..(oy + 1) * wo];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        match kx {
                            0 => dst[..w - 1].iter_mut().zip(&g[1..]).for_each(|(d, v)| *d += v),
                            1 => dst.iter_mut().zip(g).for_each(|(d, v)| *d += v),
                            _ => dst[1..].iter_mut().zip(&g[..w - 1]).for_each(|(d, v)| *d += v),
                        }
                    } else {
                        for (ox, v) in g.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn direct_conv(conv: &Conv2d, params: &[f32], x: &Tensor) -> Tensor {
        let (ho, wo) = conv.out_dims(x.h, x.w);
        let w = conv.weight.of(params);
        let mut y = Tensor::zeros(x.n, conv.out_c, ho, wo);
        for s in 0..x.n {
            for co in 0..conv.out_c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.map_or(0.0, |b| b.of(params)[co]) as f64;
                        for ci in 0..conv.in_c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * conv.stride + ky) as isize - 1;
                                    let ix = (ox * conv.stride + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    acc += (w[((co * conv.in_c + ci) * 3 + ky) * 3 + kx]
                                        * x.plane(s, ci)[iy as usize * x.w + ix as usize])
                                        as f64;
                                }
                            }
                        }
                        y.plane_mut(s, co)[oy * wo + ox] = acc as f32;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = rng_from_seed(1);
        for stride in [1, 2] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, &mut rng, "c", 3, 4, stride, true);
            store.values_mut()[conv.bias.unwrap().offset] = 0.25;
            let mut x = Tensor::zeros(2, 3, 7, 6);
            fill_normal(&mut rng, &mut x.data, 1.0);
            let got = conv.forward(store.values(), &x);
            let want = direct_conv(&conv, store.values(), &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-4, "stride {stride}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn input_gradient_is_adjoint() {
        // <conv(x) - b, dy> == <x, dx>
        let mut rng = rng_from_seed(2);
        for stride in [1, 2] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, &mut rng, "c", 2, 3, stride, false);
            let mut x = Tensor::zeros(1, 2, 6, 5);
            fill_normal(&mut rng, &mut x.data, 1.0);
            let y = conv.forward(store.values(), &x);
            let mut dy = Tensor::zeros(y.n, y.c, y.h, y.w);
            fill_normal(&mut rng, &mut dy.data, 1.0);
            let mut grads = vec![0.0; store.len()];
            let dx = conv.backward(store.values(), &mut grads, &x, &dy, true).unwrap();
            let lhs: f32 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let rhs: f32 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
            // Weight gradient is the adjoint in the weight argument too.
            let wsum: f32 = store.values().iter().zip(&grads).map(|(a, b)| a * b).sum();
            assert!((lhs - wsum).abs() < 1e-3 * lhs.abs().max(1.0));
        }
    }
}
