//! FLIMB v1: a minimal bit-exact container for multi-channel FLIM images.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "FLIM"            4 bytes magic
//! version           u8 (= 1)
//! pixel_size_um     f32
//! C, H, W           u32 each
//! C × (len u8, name ASCII)
//! C·H·W × f32       channel-major, row-major
//! ```

use std::fs;
use std::path::Path;

use flimsr_core::{Channel, FlimImage};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FLIM";
pub const VERSION: u8 = 1;

/// Size of the fixed part of the header, before the channel names.
pub const FIXED_HEADER_LEN: usize = 4 + 1 + 4 + 3 * 4;

/// Header length for a given channel list.
pub fn header_len(image: &FlimImage) -> usize {
    FIXED_HEADER_LEN + image.channels().iter().map(|c| 1 + c.name.len()).sum::<usize>()
}

pub fn encode(image: &FlimImage) -> Result<Vec<u8>> {
    if !image.is_finite() {
        return Err(Error::Format("non-finite data".into()));
    }
    let mut out = Vec::with_capacity(header_len(image) + image.data().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&image.pixel_size_um().to_le_bytes());
    for d in [image.num_channels(), image.height(), image.width()] {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for ch in image.channels() {
        out.push(ch.name.len() as u8);
        out.extend_from_slice(ch.name.as_bytes());
    }
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated FLIMB file: {what} needs {n} more bytes")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<FlimImage> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::Format("not a FLIMB file".into()));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Format(format!("unsupported FLIMB version {version} (expected {VERSION})")));
    }
    let pixel = f32::from_le_bytes(r.take(4, "pixel size")?.try_into().expect("4 bytes"));
    let c = r.u32("channel count")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let mut channels = Vec::with_capacity(c.min(16));
    for _ in 0..c {
        let len = r.take(1, "channel name length")?[0] as usize;
        let name = std::str::from_utf8(r.take(len, "channel name")?)
            .map_err(|_| Error::Format("channel name is not ASCII".into()))?;
        channels.push(Channel::from_name(name)?);
    }
    let count = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format("declared dimensions overflow".into()))?;
    let payload = r.take(count * 4, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - r.pos)));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite data".into()));
    }
    Ok(FlimImage::new(channels, h, w, pixel, data)?)
}

pub fn write_flimb(image: &FlimImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_flimb(path: impl AsRef<Path>) -> Result<FlimImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.context(path))
}
