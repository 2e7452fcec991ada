//! Six-channel FLIM raster.
//!
//! A full field of view carries three spectral bands, each with a lifetime
//! map (nanoseconds) and an intensity map (arbitrary units), stored
//! channel-major then row-major: `data[(c * height + y) * width + x]`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Canonical channel order of a full field of view.
pub const CHANNEL_NAMES: [&str; 6] = ["LT1", "INT1", "LT2", "INT2", "LT3", "INT3"];

/// Pixel pitch of the high-resolution scanner, in micrometers.
pub const HR_PIXEL_SIZE_UM: f32 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Lifetime,
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub kind: ChannelKind,
}

impl Channel {
    /// Looks up a canonical channel by name (`"LT2"`, `"INT1"`, ...).
    pub fn from_name(name: &str) -> Result<Self> {
        let kind = match name {
            "LT1" | "LT2" | "LT3" => ChannelKind::Lifetime,
            "INT1" | "INT2" | "INT3" => ChannelKind::Intensity,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown channel name {other:?}"
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            kind,
        })
    }

    fn canonical_index(&self) -> usize {
        CHANNEL_NAMES
            .iter()
            .position(|n| *n == self.name)
            .unwrap_or(usize::MAX)
    }
}

/// The six canonical channels in order.
pub fn standard_channels() -> Vec<Channel> {
    CHANNEL_NAMES
        .iter()
        .map(|n| Channel::from_name(n).expect("canonical name"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlimImage {
    channels: Vec<Channel>,
    height: usize,
    width: usize,
    pixel_size_um: f32,
    data: Vec<f32>,
}

impl FlimImage {
    /// Builds an image, checking that the channel list is a subset of the
    /// canonical channels in canonical order and that `data` has
    /// `C * H * W` entries.
    pub fn new(
        channels: Vec<Channel>,
        height: usize,
        width: usize,
        pixel_size_um: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels.is_empty() || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "image needs at least one channel and non-zero dimensions".into(),
            ));
        }
        let mut last = None;
        for ch in &channels {
            let idx = Channel::from_name(&ch.name)?.canonical_index();
            if Channel::from_name(&ch.name)?.kind != ch.kind {
                return Err(Error::InvalidArgument(format!(
                    "channel {} has the wrong kind",
                    ch.name
                )));
            }
            if last.is_some_and(|l| idx <= l) {
                return Err(Error::InvalidArgument(
                    "channels must follow LT1,INT1,LT2,INT2,LT3,INT3 order without repeats".into(),
                ));
            }
            last = Some(idx);
        }
        if !(pixel_size_um.is_finite() && pixel_size_um > 0.0) {
            return Err(Error::InvalidArgument("pixel size must be positive".into()));
        }
        let expected = channels.len() * height * width;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "data has {} values, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixel_size_um,
            data,
        })
    }

    /// Six-channel image with canonical channel names.
    pub fn standard(height: usize, width: usize, pixel_size_um: f32, data: Vec<f32>) -> Result<Self> {
        Self::new(standard_channels(), height, width, pixel_size_um, data)
    }

    /// Same metadata as `self`, new raster.
    pub fn with_data(&self, height: usize, width: usize, pixel_size_um: f32, data: Vec<f32>) -> Result<Self> {
        Self::new(self.channels.clone(), height, width, pixel_size_um, data)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_size_um(&self) -> f32 {
        self.pixel_size_um
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite)
        }
    }

    /// Copies out the `h`×`w` window starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || row + h > self.height || col + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({row},{col}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.num_channels() * h * w);
        for c in 0..self.num_channels() {
            let plane = self.channel(c);
            for y in row..row + h {
                data.extend_from_slice(&plane[y * self.width + col..y * self.width + col + w]);
            }
        }
        self.with_data(h, w, self.pixel_size_um, data)
    }

    /// Keeps only the named channels, preserving canonical order.
    pub fn select_channels(&self, names: &[&str]) -> Result<Self> {
        let mut channels = Vec::new();
        let mut data = Vec::new();
        for (c, ch) in self.channels.iter().enumerate() {
            if names.contains(&ch.name.as_str()) {
                channels.push(ch.clone());
                data.extend_from_slice(self.channel(c));
            }
        }
        Self::new(channels, self.height, self.width, self.pixel_size_um, data)
    }
}

/// One patient's whole-slide fields of view.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub images: Vec<FlimImage>,
}
