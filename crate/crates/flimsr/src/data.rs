//! On-disk dataset layout.
//!
//! A raw dataset (phantom output or converted tissue data) holds one
//! directory per patient with `fov_<i>.flimb` files. `degrade` mirrors that
//! tree and writes, per field of view:
//!
//! - `fov_<i>.lr.flimb`: the raw block-averaged image, as an instrument with
//!   a k-times larger pixel would record it;
//! - `fov_<i>.hr.flimb`: the high-resolution target, clipped and normalized
//!   with statistics of the low-resolution image;
//! - `fov_<i>.stats.json`: those statistics, needed again at inference.
//!
//! A `degrade.json` index at the root records `k` and the item list.

use std::fs;
use std::path::{Path, PathBuf};

use flimsr_core::degrade::{block_average, check_factor, preprocess_pair, tile_patches, NormScope, PairedPatch};
use flimsr_core::image::PatientRecord;
use flimsr_core::FlimImage;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::checkpoint::{read_json, save_json, save_stats};
use crate::error::{Error, Result};
use crate::flimb::{read_flimb, write_flimb};

pub const FLIMB_EXT: &str = ".flimb";
pub const LR_SUFFIX: &str = ".lr.flimb";
pub const HR_SUFFIX: &str = ".hr.flimb";
pub const STATS_SUFFIX: &str = ".stats.json";
pub const DEGRADE_INDEX: &str = "degrade.json";

/// Writes phantom records as `<dir>/<patient>/fov_<i>.flimb`.
pub fn write_patients(records: &[PatientRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for rec in records {
        let pdir = dir.join(&rec.patient_id);
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        for (i, img) in rec.images.iter().enumerate() {
            let path = pdir.join(format!("fov_{i}{FLIMB_EXT}"));
            write_flimb(img, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// All files under `dir` whose names end in `suffix`, as sorted paths
/// relative to `dir` (using `/` separators).
pub fn find_files(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(&path, e.into())
        })?;
        let name = entry.file_name().to_string_lossy();
        if entry.file_type().is_file() && name.ends_with(suffix) {
            let rel = entry.path().strip_prefix(dir).expect("walk stays under its root");
            let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
            out.push(parts.join("/"));
        }
    }
    out.sort();
    Ok(out)
}

/// Raw field-of-view files: `*.flimb` that are not degrade outputs.
pub fn find_raw_images(dir: &Path) -> Result<Vec<String>> {
    Ok(find_files(dir, FLIMB_EXT)?
        .into_iter()
        .filter(|p| !p.ends_with(LR_SUFFIX) && !p.ends_with(HR_SUFFIX))
        .collect())
}

/// Patient id of a relative path: its first component, or the file stem
/// for files at the root.
pub fn patient_of(rel: &str) -> String {
    match rel.split_once('/') {
        Some((p, _)) => p.to_string(),
        None => strip_suffix(rel, FLIMB_EXT).to_string(),
    }
}

pub fn strip_suffix<'a>(s: &'a str, suffix: &str) -> &'a str {
    s.strip_suffix(suffix).unwrap_or(s)
}

/// Statistics file belonging to an image: `a/fov_0.lr.flimb` and
/// `a/fov_0.flimb` both map to `a/fov_0.stats.json`.
pub fn stats_path_for(image: &Path) -> PathBuf {
    let name = image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = strip_suffix(strip_suffix(&name, LR_SUFFIX), FLIMB_EXT);
    image.with_file_name(format!("{stem}{STATS_SUFFIX}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeItem {
    /// Relative path without extension, e.g. `P00/fov_0`.
    pub id: String,
    pub patient_id: String,
}

impl DegradeItem {
    pub fn lr(&self) -> String {
        format!("{}{LR_SUFFIX}", self.id)
    }

    pub fn hr(&self) -> String {
        format!("{}{HR_SUFFIX}", self.id)
    }

    pub fn stats(&self) -> String {
        format!("{}{STATS_SUFFIX}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeIndex {
    pub k: usize,
    pub clip_percentile: f64,
    pub norm_scope: NormScope,
    pub items: Vec<DegradeItem>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeOptions {
    pub k: usize,
    pub clip_percentile: f64,
    pub norm_scope: NormScope,
}

/// Degrades every raw image under `input` into `output`. `filter` picks
/// which patients to include; `None` keeps all.
pub fn degrade_dir(
    input: &Path,
    output: &Path,
    opts: DegradeOptions,
    filter: Option<&dyn Fn(&str) -> bool>,
) -> Result<DegradeIndex> {
    check_factor(opts.k)?;
    let files = find_raw_images(input)?;
    if files.is_empty() {
        return Err(Error::File {
            path: input.to_path_buf(),
            message: "no .flimb images found".into(),
        });
    }
    let mut items = Vec::new();
    for rel in files {
        let patient_id = patient_of(&rel);
        if filter.is_some_and(|f| !f(&patient_id)) {
            continue;
        }
        let hr = read_flimb(input.join(&rel))?;
        let lr = block_average(&hr, opts.k).map_err(|e| Error::from(e).context(&input.join(&rel)))?;
        // Only the region covered by whole blocks has a low-resolution counterpart.
        let hr = hr.crop(0, 0, lr.height() * opts.k, lr.width() * opts.k)?;
        let (_, hr_n, stats) = preprocess_pair(&lr, &hr, opts.clip_percentile, opts.norm_scope)?;
        let item = DegradeItem {
            id: strip_suffix(&rel, FLIMB_EXT).to_string(),
            patient_id,
        };
        let dir = output.join(&item.id);
        let dir = dir.parent().unwrap_or(output);
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_flimb(&lr, output.join(item.lr()))?;
        write_flimb(&hr_n, output.join(item.hr()))?;
        save_stats(&stats, &output.join(item.stats()))?;
        items.push(item);
    }
    let index = DegradeIndex {
        k: opts.k,
        clip_percentile: opts.clip_percentile,
        norm_scope: opts.norm_scope,
        items,
    };
    save_json(&index, &output.join(DEGRADE_INDEX))?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<DegradeIndex> {
    read_json(&dir.join(DEGRADE_INDEX))
}

/// Largest patch edge not above `requested` that fits the image and is a
/// multiple of `multiple`.
pub fn fit_patch(requested: usize, image: &FlimImage, multiple: usize) -> Result<usize> {
    let edge = requested.min(image.height()).min(image.width());
    let px = edge / multiple * multiple;
    if px == 0 {
        return Err(flimsr_core::Error::ImageTooSmall {
            height: image.height(),
            width: image.width(),
            patch: multiple,
        }
        .into());
    }
    Ok(px)
}

/// Training pairs from a degraded dataset: normalized HR images are tiled
/// and each tile is block-averaged to its input.
pub fn load_training_pairs(dir: &Path, k: usize, patch_px: usize, multiple: usize) -> Result<Vec<PairedPatch>> {
    let index = read_index(dir)?;
    if index.k != k {
        return Err(flimsr_core::Error::FactorMismatch {
            expected: k,
            found: index.k,
        }
        .into());
    }
    let mut pairs = Vec::new();
    for item in &index.items {
        let path = dir.join(item.hr());
        let hr = read_flimb(&path)?;
        let px = fit_patch(patch_px, &hr, multiple).map_err(|e| e.context(&path))?;
        for p in tile_patches(&hr, px, &item.patient_id)? {
            pairs.push(PairedPatch::from_hr(p, k)?);
        }
    }
    if pairs.is_empty() {
        return Err(flimsr_core::Error::EmptyDataset.into());
    }
    Ok(pairs)
}
