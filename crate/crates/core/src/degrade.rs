//! Degradation model and pre-processing.
//!
//! Low-resolution inputs are produced by k×k non-overlapping block
//! averaging of the high-resolution field of view. Both images are then
//! clipped per channel at a percentile of the low-resolution channel and
//! min-max normalized with statistics taken from the low-resolution image
//! only, so inference can reproduce the exact same mapping without a
//! high-resolution reference.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::image::FlimImage;
use crate::resample::{resize_planes, ResizePlan};
use crate::{Error, Result};

pub const DEFAULT_CLIP_PERCENTILE: f64 = 99.5;
pub const DEFAULT_PATCH_PX: usize = 256;

/// Super-resolution factors the models are trained and evaluated for.
pub const SUPPORTED_FACTORS: core::ops::RangeInclusive<usize> = 2..=7;

pub fn check_factor(k: usize) -> Result<()> {
    if SUPPORTED_FACTORS.contains(&k) {
        Ok(())
    } else {
        Err(Error::FactorOutOfRange(k))
    }
}

/// Mean over each k×k block of the top-left `k⌊H/k⌋ × k⌊W/k⌋` region.
pub fn block_average(image: &FlimImage, k: usize) -> Result<FlimImage> {
    let (h, w) = (image.height(), image.width());
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > h || k > w {
        return Err(Error::FactorTooLarge {
            k,
            height: h,
            width: w,
        });
    }
    if k == 1 {
        return Ok(image.clone());
    }
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0f32; image.num_channels() * oh * ow];
    let mut acc = vec![0.0f64; ow];
    for c in 0..image.num_channels() {
        let plane = image.channel(c);
        for oy in 0..oh {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for y in oy * k..(oy + 1) * k {
                let row = &plane[y * w..y * w + ow * k];
                for (ox, a) in acc.iter_mut().enumerate() {
                    *a += row[ox * k..(ox + 1) * k].iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            let dst = &mut out[(c * oh + oy) * ow..(c * oh + oy + 1) * ow];
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = (a * inv) as f32;
            }
        }
    }
    image.with_data(oh, ow, image.pixel_size_um() * k as f32, out)
}

/// Nearest-rank percentile: the value at 1-based rank `⌈q/100 · n⌉` of the
/// sorted sample.
pub fn nearest_rank_percentile(values: &[f32], q: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::EmptyChannel);
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("percentile {q} outside [0, 100]")));
    }
    let n = values.len();
    // q * n is exact for the usual decimal q; divide last to keep it so.
    let rank = libm::ceil(q * n as f64 / 100.0 - 1e-9).clamp(1.0, n as f64) as usize;
    let mut buf = values.to_vec();
    let (_, v, _) = buf.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Ok(*v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    pub percentile: f64,
    /// Upper clip value per channel.
    pub thresholds: Vec<f32>,
}

impl ClipStats {
    pub fn apply(&self, image: &FlimImage) -> Result<FlimImage> {
        check_channel_count(image, self.thresholds.len())?;
        let mut out = image.clone();
        for (c, &t) in self.thresholds.iter().enumerate() {
            for v in out.channel_mut(c) {
                if *v > t {
                    *v = t;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScope {
    /// Statistics from the whole low-resolution field of view.
    #[default]
    Wsi,
    /// Statistics from each low-resolution patch.
    Patch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scope: NormScope,
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl NormStats {
    /// `(v - min) / (max - min)` clamped to `[0, 1]`; constant channels map to 0.
    pub fn apply(&self, image: &FlimImage) -> Result<FlimImage> {
        check_channel_count(image, self.min.len())?;
        let mut out = image.clone();
        for c in 0..self.min.len() {
            let (lo, hi) = (self.min[c] as f64, self.max[c] as f64);
            let range = hi - lo;
            for v in out.channel_mut(c) {
                *v = if range > 0.0 {
                    ((*v as f64 - lo) / range).clamp(0.0, 1.0) as f32
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

/// Clip and normalization statistics that must travel with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub clip: ClipStats,
    pub norm: NormStats,
}

impl PreprocessStats {
    pub fn apply(&self, image: &FlimImage) -> Result<FlimImage> {
        self.norm.apply(&self.clip.apply(image)?)
    }
}

fn check_channel_count(image: &FlimImage, n: usize) -> Result<()> {
    if image.num_channels() != n {
        return Err(Error::ShapeMismatch(format!(
            "statistics cover {n} channels, image has {}",
            image.num_channels()
        )));
    }
    Ok(())
}

fn check_same_channels(lr: &FlimImage, hr: &FlimImage) -> Result<()> {
    if lr.channels() != hr.channels() {
        return Err(Error::ShapeMismatch("lr and hr channel lists differ".into()));
    }
    Ok(())
}

/// Clips both images at the `q`-th percentile of each low-resolution channel.
pub fn clip_percentile(
    lr: &FlimImage,
    hr: &FlimImage,
    q: f64,
) -> Result<(FlimImage, FlimImage, ClipStats)> {
    check_same_channels(lr, hr)?;
    let thresholds = (0..lr.num_channels())
        .map(|c| nearest_rank_percentile(lr.channel(c), q))
        .collect::<Result<Vec<_>>>()?;
    let stats = ClipStats {
        percentile: q,
        thresholds,
    };
    Ok((stats.apply(lr)?, stats.apply(hr)?, stats))
}

/// Min-max statistics of each low-resolution channel, applied to both images.
pub fn minmax_normalize(
    lr: &FlimImage,
    hr: &FlimImage,
    scope: NormScope,
) -> Result<(FlimImage, FlimImage, NormStats)> {
    check_same_channels(lr, hr)?;
    let mut min = Vec::with_capacity(lr.num_channels());
    let mut max = Vec::with_capacity(lr.num_channels());
    for c in 0..lr.num_channels() {
        let ch = lr.channel(c);
        min.push(ch.iter().copied().fold(f32::INFINITY, f32::min));
        max.push(ch.iter().copied().fold(f32::NEG_INFINITY, f32::max));
    }
    let stats = NormStats { scope, min, max };
    Ok((stats.apply(lr)?, stats.apply(hr)?, stats))
}

/// Full LR-driven preprocessing: clip at `q` then min-max normalize.
pub fn preprocess_pair(
    lr: &FlimImage,
    hr: &FlimImage,
    q: f64,
    scope: NormScope,
) -> Result<(FlimImage, FlimImage, PreprocessStats)> {
    let (lr_c, hr_c, clip) = clip_percentile(lr, hr, q)?;
    let (lr_n, hr_n, norm) = minmax_normalize(&lr_c, &hr_c, scope)?;
    Ok((lr_n, hr_n, PreprocessStats { clip, norm }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: FlimImage,
    /// Top-left `(row, col)` in the parent image.
    pub origin: (usize, usize),
    pub patient_id: String,
}

/// Non-overlapping grid tiling from the top-left; partial edge tiles are dropped.
pub fn tile_patches(image: &FlimImage, patch_px: usize, patient_id: &str) -> Result<Vec<Patch>> {
    if patch_px == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let (h, w) = (image.height(), image.width());
    if h < patch_px || w < patch_px {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            patch: patch_px,
        });
    }
    let mut out = Vec::with_capacity((h / patch_px) * (w / patch_px));
    for r in 0..h / patch_px {
        for c in 0..w / patch_px {
            let origin = (r * patch_px, c * patch_px);
            out.push(Patch {
                image: image.crop(origin.0, origin.1, patch_px, patch_px)?,
                origin,
                patient_id: patient_id.into(),
            });
        }
    }
    Ok(out)
}

/// A high-resolution patch and its block-averaged counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedPatch {
    /// Origin is the high-resolution origin divided by `k` (floored).
    pub lr: Patch,
    pub hr: Patch,
    pub k: usize,
}

impl PairedPatch {
    pub fn from_hr(hr: Patch, k: usize) -> Result<Self> {
        let lr = Patch {
            image: block_average(&hr.image, k)?,
            origin: (hr.origin.0 / k, hr.origin.1 / k),
            patient_id: hr.patient_id.clone(),
        };
        Ok(Self { lr, hr, k })
    }
}

/// Tiles an already normalized high-resolution image and degrades every tile.
pub fn paired_patches(
    hr: &FlimImage,
    k: usize,
    patch_px: usize,
    patient_id: &str,
) -> Result<Vec<PairedPatch>> {
    tile_patches(hr, patch_px, patient_id)?
        .into_iter()
        .map(|p| PairedPatch::from_hr(p, k))
        .collect()
}

pub fn bilinear_resize(image: &FlimImage, out_h: usize, out_w: usize) -> Result<FlimImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("output dimensions must be positive".into()));
    }
    let plan = ResizePlan::new(image.height(), image.width(), out_h, out_w);
    let data = resize_planes(image.data(), image.num_channels(), &plan);
    let pixel = image.pixel_size_um() * image.height() as f32 / out_h as f32;
    image.with_data(out_h, out_w, pixel, data)
}
