//! Image-quality metrics: MSE, PSNR and SSIM, per channel and averaged per
//! FLIM modality.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::image::{ChannelKind, FlimImage};
use crate::{Error, Result};

/// Dynamic range and SSIM stabilizers, `C1 = (0.01 L)²`, `C2 = (0.03 L)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConstants {
    pub l: f64,
    pub c1: f64,
    pub c2: f64,
}

impl MetricConstants {
    pub fn new(l: f64) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidArgument(format!("dynamic range {l} must be positive")));
        }
        Ok(Self {
            l,
            c1: (0.01 * l).powi(2),
            c2: (0.03 * l).powi(2),
        })
    }
}

impl Default for MetricConstants {
    fn default() -> Self {
        Self::new(1.0).expect("unit range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    /// One evaluation with whole-image means, variances and covariance.
    #[default]
    Global,
    /// Mean over 11×11 Gaussian windows (σ = 1.5), valid positions only.
    Windowed,
}

fn check_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(pred: &[f32], target: &[f32]) -> Result<f64> {
    check_len(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `10 log10(L² / mse)`; a zero error gives `+∞`.
pub fn psnr_from_mse(mse: f64, l: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (l * l / mse).log10()
    }
}

pub fn psnr(pred: &[f32], target: &[f32], l: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?, l))
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, k: &MetricConstants) -> f64 {
    ((2.0 * mx * my + k.c1) * (2.0 * cxy + k.c2)) / ((mx * mx + my * my + k.c1) * (vx + vy + k.c2))
}

/// SSIM of one `h×w` plane pair.
pub fn ssim(
    pred: &[f32],
    target: &[f32],
    h: usize,
    w: usize,
    constants: &MetricConstants,
    mode: SsimMode,
) -> Result<f64> {
    check_len(pred, target)?;
    if pred.len() != h * w {
        return Err(Error::ShapeMismatch(format!("{} values for a {h}x{w} plane", pred.len())));
    }
    match mode {
        SsimMode::Global => Ok(ssim_global(pred, target, constants)),
        SsimMode::Windowed => ssim_windowed(pred, target, h, w, constants),
    }
}

fn ssim_global(x: &[f32], y: &[f32], k: &MetricConstants) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a as f64 - mx, b as f64 - my);
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    ssim_formula(mx, my, vx / n, vy / n, cxy / n, k)
}

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..WINDOW).map(|i| g[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_windowed(x: &[f32], y: &[f32], h: usize, w: usize, k: &MetricConstants) -> Result<f64> {
    if h < WINDOW || w < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "windowed SSIM needs at least {WINDOW}x{WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
    let mx = filter_valid(&xs, h, w, &g);
    let my = filter_valid(&ys, h, w, &g);
    let mxx = filter_valid(&xx, h, w, &g);
    let myy = filter_valid(&yy, h, w, &g);
    let mxy = filter_valid(&xy, h, w, &g);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            ssim_formula(a, b, mxx[i] - a * a, myy[i] - b * b, mxy[i] - a * b, k)
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod serde_f64 {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct F64Visitor;

    impl Visitor<'_> for F64Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(F64Visitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub mse: f64,
    #[serde(with = "serde_f64")]
    pub psnr: f64,
    pub ssim: f64,
    /// Pluggable perceptual score, when one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perceptual: Option<f64>,
}

/// Channel-averaged values for one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityMetrics {
    pub mse: f64,
    #[serde(with = "serde_f64")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub id: String,
    pub channels: Vec<ChannelMetrics>,
    pub lifetime: Option<ModalityMetrics>,
    pub intensity: Option<ModalityMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim_mode: SsimMode,
    pub constants: MetricConstants,
    /// Name of the perceptual metric plugged in, if any.
    pub perceptual_metric: Option<String>,
    pub pairs: Vec<PairMetrics>,
    /// Per-channel means over all pairs.
    pub channels: Vec<ChannelMetrics>,
    pub lifetime: Option<ModalityMetrics>,
    pub intensity: Option<ModalityMetrics>,
}

impl MetricReport {
    /// Values of `metric` for `channel` across pairs, in report order.
    pub fn series(&self, channel: &str, metric: MetricKind) -> Option<Vec<f64>> {
        self.pairs
            .iter()
            .map(|p| p.channels.iter().find(|c| c.channel == channel).and_then(|c| metric.get(c)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    Psnr,
    Ssim,
    Perceptual,
}

impl MetricKind {
    pub fn get(&self, c: &ChannelMetrics) -> Option<f64> {
        match self {
            MetricKind::Mse => Some(c.mse),
            MetricKind::Psnr => Some(c.psnr),
            MetricKind::Ssim => Some(c.ssim),
            MetricKind::Perceptual => c.perceptual,
        }
    }

    pub fn higher_is_better(&self) -> bool {
        matches!(self, MetricKind::Psnr | MetricKind::Ssim)
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::Perceptual => "perceptual",
        }
    }
}

/// Slot for a learned perceptual metric (e.g. LPIPS). Lower is better.
pub trait PerceptualMetric {
    fn name(&self) -> &str;
    fn score(&self, pred: &[f32], target: &[f32], height: usize, width: usize) -> f64;
}

fn modality_average(channels: &[ChannelMetrics], kinds: &[ChannelKind], want: ChannelKind) -> Option<ModalityMetrics> {
    let sel: Vec<&ChannelMetrics> = channels.iter().zip(kinds).filter(|(_, k)| **k == want).map(|(c, _)| c).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some(ModalityMetrics {
        mse: sel.iter().map(|c| c.mse).sum::<f64>() / n,
        psnr: sel.iter().map(|c| c.psnr).sum::<f64>() / n,
        ssim: sel.iter().map(|c| c.ssim).sum::<f64>() / n,
    })
}

/// Metrics for one prediction/target pair.
pub fn evaluate_pair(
    id: &str,
    pred: &FlimImage,
    target: &FlimImage,
    constants: &MetricConstants,
    mode: SsimMode,
    perceptual: Option<&dyn PerceptualMetric>,
) -> Result<PairMetrics> {
    if pred.channels() != target.channels() || pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::ShapeMismatch(format!("prediction and target {id} differ in shape")));
    }
    let (h, w) = (target.height(), target.width());
    let mut channels = Vec::with_capacity(target.num_channels());
    for (c, ch) in target.channels().iter().enumerate() {
        let (p, t) = (pred.channel(c), target.channel(c));
        let m = mse(p, t)?;
        channels.push(ChannelMetrics {
            channel: ch.name.clone(),
            mse: m,
            psnr: psnr_from_mse(m, constants.l),
            ssim: ssim(p, t, h, w, constants, mode)?,
            perceptual: perceptual.map(|pm| pm.score(p, t, h, w)),
        });
    }
    let kinds: Vec<ChannelKind> = target.channels().iter().map(|c| c.kind).collect();
    Ok(PairMetrics {
        id: id.into(),
        lifetime: modality_average(&channels, &kinds, ChannelKind::Lifetime),
        intensity: modality_average(&channels, &kinds, ChannelKind::Intensity),
        channels,
    })
}

/// Evaluates `(id, prediction, target)` triples. All targets must share one
/// channel list; pairs are reported in input order.
pub fn evaluate(
    pairs: &[(String, &FlimImage, &FlimImage)],
    constants: &MetricConstants,
    mode: SsimMode,
    perceptual: Option<&dyn PerceptualMetric>,
) -> Result<MetricReport> {
    let first = pairs.first().ok_or(Error::EmptyDataset)?;
    let names = first.2.channels().to_vec();
    let mut out = Vec::with_capacity(pairs.len());
    for (id, pred, target) in pairs {
        if target.channels() != names.as_slice() {
            return Err(Error::ShapeMismatch(format!("pair {id} has a different channel list")));
        }
        out.push(evaluate_pair(id, pred, target, constants, mode, perceptual)?);
    }
    let n = out.len() as f64;
    let channels: Vec<ChannelMetrics> = names
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let mean = |f: &dyn Fn(&ChannelMetrics) -> f64| out.iter().map(|p| f(&p.channels[c])).sum::<f64>() / n;
            ChannelMetrics {
                channel: ch.name.clone(),
                mse: mean(&|m| m.mse),
                psnr: mean(&|m| m.psnr),
                ssim: mean(&|m| m.ssim),
                perceptual: perceptual.map(|_| mean(&|m| m.perceptual.unwrap_or(f64::NAN))),
            }
        })
        .collect();
    let kinds: Vec<ChannelKind> = names.iter().map(|c| c.kind).collect();
    Ok(MetricReport {
        ssim_mode: mode,
        constants: *constants,
        perceptual_metric: perceptual.map(|p| p.name().into()),
        lifetime: modality_average(&channels, &kinds, ChannelKind::Lifetime),
        intensity: modality_average(&channels, &kinds, ChannelKind::Intensity),
        pairs: out,
        channels,
    })
}
