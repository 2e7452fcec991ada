//! Synthetic six-channel FLIM phantoms.
//!
//! Each field of view is assembled from periodic random fields, so its
//! spectrum has no wrap-around edge artifacts:
//!
//! - tissue regions: a large-scale smooth field cut at two levels by soft
//!   (logistic) thresholds, each region carrying its own offset;
//! - Gaussian blobs at the requested structure scales;
//! - filaments along the zero set of a mid-scale field.
//!
//! Per spectral band the combined structure `S ∈ [0, 1]` is shared by the
//! lifetime and intensity channels; each channel adds its own fine texture.
//! The mixing weights `(1 ± ρ) / 2` tie edge locations across the pair.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::{FlimImage, PatientRecord, HR_PIXEL_SIZE_UM};
use crate::rng::{fill_normal, stage, stage_rng, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_patients: usize,
    pub fovs_per_patient: usize,
    pub fov_size: usize,
    /// Lifetime value range in nanoseconds, `[min, max]`.
    pub lifetime_range: [f32; 2],
    /// Feature sizes in pixels.
    pub structure_scales: Vec<f32>,
    pub cross_channel_correlation: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            n_patients: 19,
            fovs_per_patient: 2,
            fov_size: 256,
            lifetime_range: [0.0, 10.0],
            structure_scales: vec![4.0, 12.0, 32.0],
            cross_channel_correlation: 0.5,
        }
    }
}

pub const MIN_FOV_SIZE: usize = 64;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_patients == 0 || self.fovs_per_patient == 0 {
            return bad(format!(
                "need at least one patient and one field of view, got {}x{}",
                self.n_patients, self.fovs_per_patient
            ));
        }
        if self.fov_size < MIN_FOV_SIZE {
            return bad(format!("fov_size {} below {MIN_FOV_SIZE}", self.fov_size));
        }
        let [lo, hi] = self.lifetime_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("lifetime range [{lo}, {hi}] must satisfy min < max"));
        }
        if self.structure_scales.is_empty() || self.structure_scales.iter().any(|s| !(s.is_finite() && *s >= 1.0)) {
            return bad(String::from("structure scales must be non-empty and each at least 1 pixel"));
        }
        let rho = self.cross_channel_correlation;
        if !(0.0..=1.0).contains(&rho) {
            return bad(format!("cross-channel correlation {rho} outside [0, 1]"));
        }
        Ok(())
    }

    fn sorted_scales(&self) -> Vec<f32> {
        let mut s = self.structure_scales.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        s
    }
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:02}")
}

/// Generates `n_patients` records of `fovs_per_patient` six-channel images.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Vec<PatientRecord>> {
    spec.validate()?;
    let mut rng = stage_rng(seed, stage::PHANTOM);
    let mut out = Vec::with_capacity(spec.n_patients);
    for p in 0..spec.n_patients {
        let images = (0..spec.fovs_per_patient)
            .map(|_| generate_fov(spec, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        out.push(PatientRecord {
            patient_id: patient_id(p),
            images,
        });
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with periodic boundaries.
fn blur_periodic(src: &[f32], n: usize, sigma: f32) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let ni = n as isize;
    let wrap = |i: isize| i.rem_euclid(ni) as usize;
    let mut tmp = vec![0.0f32; n * n];
    for y in 0..n {
        let row = &src[y * n..(y + 1) * n];
        for x in 0..n {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * row[wrap(x as isize + t as isize - r)];
            }
            tmp[y * n + x] = acc;
        }
    }
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for (t, &kv) in k.iter().enumerate() {
            let sy = wrap(y as isize + t as isize - r);
            let src_row = &tmp[sy * n..(sy + 1) * n];
            let dst = &mut out[y * n..(y + 1) * n];
            for (d, &s) in dst.iter_mut().zip(src_row) {
                *d += kv * s;
            }
        }
    }
    out
}

fn standardize(v: &mut [f32]) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = ((*x as f64 - mean) / sd) as f32);
}

fn rescale_unit(v: &mut [f32]) {
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    v.iter_mut().for_each(|x| *x = if span > 0.0 { (*x - lo) / span } else { 0.0 });
}

/// Zero-mean, unit-variance periodic field with correlation length `sigma`.
fn smooth_field(rng: &mut Rng, n: usize, sigma: f32) -> Vec<f32> {
    let mut white = vec![0.0f32; n * n];
    fill_normal(rng, &mut white, 1.0);
    let mut f = blur_periodic(&white, n, sigma);
    standardize(&mut f);
    f
}

/// Root-mean-square periodic finite-difference gradient of a field.
fn rms_gradient(f: &[f32], n: usize) -> f32 {
    let mut acc = 0.0f64;
    for y in 0..n {
        for x in 0..n {
            let gx = f[y * n + (x + 1) % n] - f[y * n + x];
            let gy = f[((y + 1) % n) * n + x] - f[y * n + x];
            acc += (gx * gx + gy * gy) as f64;
        }
    }
    (acc / (n * n) as f64).sqrt() as f32
}

fn logistic(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft two-level partition of a large-scale field into three regions.
struct Regions {
    levels: [f32; 2],
    soft: [Vec<f32>; 2],
}

impl Regions {
    fn new(rng: &mut Rng, n: usize, sigma: f32, edge_px: f32) -> Self {
        let field = smooth_field(rng, n, sigma);
        let width = edge_px * rms_gradient(&field, n);
        let a = rng.random_range(-0.9f32..-0.1);
        let b = rng.random_range(0.1f32..0.9);
        let soft = [
            field.iter().map(|&v| logistic((v - a) / width)).collect(),
            field.iter().map(|&v| logistic((v - b) / width)).collect(),
        ];
        Self { levels: [a, b], soft }
    }

    /// Piecewise offsets `o0`, `o1`, `o2` blended across the soft boundaries.
    fn render(&self, offsets: [f32; 3]) -> Vec<f32> {
        debug_assert!(self.levels[0] < self.levels[1]);
        self.soft[0]
            .iter()
            .zip(&self.soft[1])
            .map(|(&s0, &s1)| offsets[0] + (offsets[1] - offsets[0]) * s0 + (offsets[2] - offsets[1]) * s1)
            .collect()
    }
}

fn blobs(rng: &mut Rng, n: usize, scales: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; n * n];
    let mean_area: f32 = scales.iter().map(|s| s * s).sum::<f32>() / scales.len() as f32;
    let count = ((n * n) as f32 / (8.0 * mean_area)).ceil().max(4.0) as usize;
    let ni = n as isize;
    for _ in 0..count {
        let sigma = scales[rng.random_range(0..scales.len())] * 0.5;
        let cy = rng.random_range(0..n) as isize;
        let cx = rng.random_range(0..n) as isize;
        let amp = rng.random_range(-1.0f32..1.0);
        let r = ((3.0 * sigma).ceil() as isize).min(ni / 2 - 1);
        for dy in -r..=r {
            let y = (cy + dy).rem_euclid(ni) as usize;
            for dx in -r..=r {
                let x = (cx + dx).rem_euclid(ni) as usize;
                let d2 = (dy * dy + dx * dx) as f32;
                out[y * n + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    out
}

fn filaments(rng: &mut Rng, n: usize, sigma: f32, half_width_px: f32) -> Vec<f32> {
    let f = smooth_field(rng, n, sigma);
    let tau = half_width_px * rms_gradient(&f, n);
    f.iter().map(|&v| (-(v / tau).powi(2)).exp()).collect()
}

fn texture(rng: &mut Rng, n: usize, sigma: f32) -> Vec<f32> {
    let mut t = smooth_field(rng, n, sigma);
    rescale_unit(&mut t);
    t
}

fn generate_fov(spec: &PhantomSpec, rng: &mut Rng) -> Result<FlimImage> {
    let n = spec.fov_size;
    let scales = spec.sorted_scales();
    let finest = scales[0];
    let coarsest = scales[scales.len() - 1];
    let mid = scales[scales.len() / 2];
    // Region boundaries and filaments are a few pixels wide so that the
    // spectrum stays below half the pixel Nyquist rate.
    let edge_px = (0.5 * finest).max(1.5);
    let texture_sigma = (0.5 * finest).max(1.5);

    let rho = spec.cross_channel_correlation;
    let (w_s, w_n) = ((1.0 + rho) / 2.0, (1.0 - rho) / 2.0);
    let [lo, hi] = spec.lifetime_range;

    let regions = Regions::new(rng, n, 0.5 * coarsest, edge_px);
    let mut data = Vec::with_capacity(6 * n * n);
    for _band in 0..3 {
        let offsets = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        let reg = regions.render(offsets);
        let blob = blobs(rng, n, &scales);
        let fil = filaments(rng, n, mid, edge_px);
        let mut s: Vec<f32> = (0..n * n).map(|i| 0.5 * reg[i] + 0.3 * blob[i] + 0.2 * fil[i]).collect();
        rescale_unit(&mut s);

        let lt_tex = texture(rng, n, texture_sigma);
        let int_tex = texture(rng, n, texture_sigma);
        let inverted = rng.random::<bool>();
        let int_scale = rng.random_range(0.5f32..2.0);

        data.extend(
            s.iter()
                .zip(&lt_tex)
                .map(|(&sv, &nv)| (lo + (hi - lo) * (w_s * sv + w_n * nv)).clamp(lo, hi)),
        );
        data.extend(s.iter().zip(&int_tex).map(|(&sv, &nv)| {
            let shared = if inverted { 1.0 - sv } else { sv };
            (int_scale * (w_s * shared + w_n * nv)).max(0.0)
        }));
    }
    FlimImage::standard(n, n, HR_PIXEL_SIZE_UM, data)
}

/// Pearson correlation of the central-difference gradient magnitudes of two
/// `h×w` planes (interior pixels only).
pub fn gradient_magnitude_correlation(a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w || h < 3 || w < 3 {
        return Err(Error::ShapeMismatch(format!("planes of {} and {} values for {h}x{w}", a.len(), b.len())));
    }
    let grad = |p: &[f32]| -> Vec<f64> {
        let mut g = Vec::with_capacity((h - 2) * (w - 2));
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = (p[y * w + x + 1] - p[y * w + x - 1]) as f64 * 0.5;
                let gy = (p[(y + 1) * w + x] - p[(y - 1) * w + x]) as f64 * 0.5;
                g.push((gx * gx + gy * gy).sqrt());
            }
        }
        g
    };
    let (ga, gb) = (grad(a), grad(b));
    let m = ga.len() as f64;
    let (ma, mb) = (ga.iter().sum::<f64>() / m, gb.iter().sum::<f64>() / m);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ga.iter().zip(&gb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(if saa == sbb { 1.0 } else { 0.0 });
    }
    Ok(sab / (saa * sbb).sqrt())
}
