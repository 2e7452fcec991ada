//! 2-D DFT power spectra and their radial averages.

use std::io::Write;
use std::path::Path;

use flimsr_core::spectrum::{radial_average, RadialSpectrum};
use flimsr_core::FlimImage;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const MIN_SPECTRUM_DIM: usize = 8;

/// `|F(u, v)|²` of a row-major `h×w` plane, unnormalized, in DFT index order.
pub fn power_spectrum_2d(plane: &[f32], h: usize, w: usize) -> Result<Vec<f64>> {
    if plane.len() != h * w || h == 0 || w == 0 {
        return Err(flimsr_core::Error::ShapeMismatch(format!("{} values for a {h}x{w} plane", plane.len())).into());
    }
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        col_fft.process(&mut col);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
    Ok(buf.iter().map(|c| c.norm_sqr()).collect())
}

/// Radially averaged power spectrum with unit-width integer radius bins.
pub fn radial_power_spectrum(plane: &[f32], h: usize, w: usize) -> Result<RadialSpectrum> {
    if h < MIN_SPECTRUM_DIM || w < MIN_SPECTRUM_DIM {
        return Err(flimsr_core::Error::InvalidArgument(format!(
            "spectrum needs at least {MIN_SPECTRUM_DIM}x{MIN_SPECTRUM_DIM} pixels, got {h}x{w}"
        ))
        .into());
    }
    let power = power_spectrum_2d(plane, h, w)?;
    Ok(radial_average(&power, h, w)?)
}

/// Spectrum of one named channel.
pub fn channel_spectrum(image: &FlimImage, channel: &str) -> Result<RadialSpectrum> {
    let c = image
        .channel_index(channel)
        .ok_or_else(|| Error::Config(format!("image has no channel {channel}")))?;
    radial_power_spectrum(image.channel(c), image.height(), image.width())
}

pub fn write_spectrum_csv(spectrum: &RadialSpectrum, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "bin_center_cycles_per_pixel,mean_power")?;
    for (f, p) in spectrum.bin_centers.iter().zip(&spectrum.mean_power) {
        writeln!(out, "{f},{p}")?;
    }
    Ok(())
}

pub fn save_spectrum_csv(spectrum: &RadialSpectrum, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_spectrum_csv(spectrum, &mut buf).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
