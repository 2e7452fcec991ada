//! Radially averaged power spectra.
//!
//! The Fourier transform itself lives with the IO crate; this module bins a
//! power array given in standard DFT index order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// Inherent float methods need std; no_std builds go through libm.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSpectrum {
    /// Bin centers in cycles per pixel.
    pub bin_centers: Vec<f64>,
    pub mean_power: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RadialSpectrum {
    pub fn len(&self) -> usize {
        self.bin_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_centers.is_empty()
    }

    /// Share of total power in bins whose center exceeds `cutoff` cycles/px.
    pub fn power_fraction_above(&self, cutoff: f64) -> f64 {
        let mut total = 0.0;
        let mut above = 0.0;
        for i in 0..self.len() {
            let p = self.mean_power[i] * self.counts[i] as f64;
            total += p;
            if self.bin_centers[i] > cutoff {
                above += p;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            above / total
        }
    }
}

/// Signed frequency of DFT index `i` along an axis of length `n`.
pub fn signed_frequency(i: usize, n: usize) -> isize {
    if i <= n / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Radial bin of DFT index `(i, j)` on an `h×w` grid. Bin `b` is centered on
/// `b / max(h, w)` cycles per pixel.
pub fn radial_bin(i: usize, j: usize, h: usize, w: usize) -> usize {
    let n = h.max(w) as f64;
    let u = signed_frequency(i, h) as f64 / h as f64;
    let v = signed_frequency(j, w) as f64 / w as f64;
    ((u * u + v * v).sqrt() * n).round() as usize
}

/// Averages a row-major `h×w` power array over annuli of constant radius.
pub fn radial_average(power: &[f64], h: usize, w: usize) -> Result<RadialSpectrum> {
    if h == 0 || w == 0 || power.len() != h * w {
        return Err(Error::ShapeMismatch(format!("{} power values for a {h}x{w} grid", power.len())));
    }
    let nbins = radial_bin(h / 2, w / 2, h, w) + 1;
    let mut sums = vec![0.0f64; nbins];
    let mut counts = vec![0usize; nbins];
    for i in 0..h {
        for j in 0..w {
            let b = radial_bin(i, j, h, w);
            sums[b] += power[i * w + j];
            counts[b] += 1;
        }
    }
    let n = h.max(w) as f64;
    Ok(RadialSpectrum {
        bin_centers: (0..nbins).map(|b| b as f64 / n).collect(),
        mean_power: sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect(),
        counts,
    })
}
