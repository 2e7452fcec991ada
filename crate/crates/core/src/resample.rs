//! Separable bilinear resampling with half-pixel centre alignment.
//!
//! Output pixel `o` samples the source at `(o + 0.5) * in / out - 0.5`,
//! clamped to the valid range, which is the `align_corners = false`
//! convention. The same plan drives image resizing, the generator's
//! parameter-free front end and the decoder's ×2 upsampling, and its
//! [`ResizePlan::adjoint`] is the exact transpose used in backprop.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f32,
    w1: f32,
}

#[derive(Debug, Clone)]
struct AxisPlan {
    in_len: usize,
    taps: Vec<Tap>,
}

impl AxisPlan {
    fn new(in_len: usize, out_len: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let taps = (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (libm::floor(src) as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                let frac = (src - i0 as f64).clamp(0.0, 1.0);
                Tap {
                    i0,
                    i1,
                    w0: (1.0 - frac) as f32,
                    w1: frac as f32,
                }
            })
            .collect();
        Self { in_len, taps }
    }
}

#[derive(Debug, Clone)]
pub struct ResizePlan {
    rows: AxisPlan,
    cols: AxisPlan,
}

impl ResizePlan {
    /// Panics if any dimension is zero.
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        assert!(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, "zero-sized resize");
        Self {
            rows: AxisPlan::new(in_h, out_h),
            cols: AxisPlan::new(in_w, out_w),
        }
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.taps.len(), self.cols.taps.len())
    }

    /// Resizes one plane.
    pub fn apply(&self, src: &[f32], dst: &mut [f32]) {
        let (in_h, in_w) = self.in_dims();
        let (out_h, out_w) = self.out_dims();
        debug_assert_eq!(src.len(), in_h * in_w);
        debug_assert_eq!(dst.len(), out_h * out_w);
        let mut tmp = vec![0.0f32; in_h * out_w];
        for y in 0..in_h {
            let row = &src[y * in_w..(y + 1) * in_w];
            let out = &mut tmp[y * out_w..(y + 1) * out_w];
            for (o, t) in out.iter_mut().zip(&self.cols.taps) {
                *o = t.w0 * row[t.i0] + t.w1 * row[t.i1];
            }
        }
        for (oy, t) in self.rows.taps.iter().enumerate() {
            let r0 = &tmp[t.i0 * out_w..(t.i0 + 1) * out_w];
            let r1 = &tmp[t.i1 * out_w..(t.i1 + 1) * out_w];
            let out = &mut dst[oy * out_w..(oy + 1) * out_w];
            for x in 0..out_w {
                out[x] = t.w0 * r0[x] + t.w1 * r1[x];
            }
        }
    }

    /// Accumulates the transpose of [`apply`](Self::apply): `dsrc += Aᵀ dout`.
    pub fn adjoint(&self, dout: &[f32], dsrc: &mut [f32]) {
        let (in_h, in_w) = self.in_dims();
        let (out_h, out_w) = self.out_dims();
        debug_assert_eq!(dout.len(), out_h * out_w);
        debug_assert_eq!(dsrc.len(), in_h * in_w);
        let mut tmp = vec![0.0f32; in_h * out_w];
        for (oy, t) in self.rows.taps.iter().enumerate() {
            let g = &dout[oy * out_w..(oy + 1) * out_w];
            for x in 0..out_w {
                tmp[t.i0 * out_w + x] += t.w0 * g[x];
                tmp[t.i1 * out_w + x] += t.w1 * g[x];
            }
        }
        for y in 0..in_h {
            let g = &tmp[y * out_w..(y + 1) * out_w];
            let out = &mut dsrc[y * in_w..(y + 1) * in_w];
            for (gx, t) in g.iter().zip(&self.cols.taps) {
                out[t.i0] += t.w0 * gx;
                out[t.i1] += t.w1 * gx;
            }
        }
    }
}

/// Resizes a stack of `planes` planes laid out back to back.
pub fn resize_planes(src: &[f32], planes: usize, plan: &ResizePlan) -> Vec<f32> {
    let (in_h, in_w) = plan.in_dims();
    let (out_h, out_w) = plan.out_dims();
    let mut out = vec![0.0; planes * out_h * out_w];
    for p in 0..planes {
        plan.apply(
            &src[p * in_h * in_w..(p + 1) * in_h * in_w],
            &mut out[p * out_h * out_w..(p + 1) * out_h * out_w],
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let src: Vec<f32> = (0..35).map(|v| v as f32 * 0.37).collect();
        let plan = ResizePlan::new(5, 7, 5, 7);
        let mut dst = vec![0.0; 35];
        plan.apply(&src, &mut dst);
        assert_eq!(src, dst);
    }

    #[test]
    fn adjoint_matches_transpose() {
        // <A x, y> == <x, Aᵀ y>
        let plan = ResizePlan::new(3, 4, 7, 5);
        let x: Vec<f32> = (0..12).map(|v| (v as f32 * 0.7).sin()).collect();
        let y: Vec<f32> = (0..35).map(|v| (v as f32 * 1.3).cos()).collect();
        let mut ax = vec![0.0; 35];
        plan.apply(&x, &mut ax);
        let mut aty = vec![0.0; 12];
        plan.adjoint(&y, &mut aty);
        let lhs: f32 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }
}
