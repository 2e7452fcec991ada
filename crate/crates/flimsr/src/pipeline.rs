//! End-to-end run: phantom → degrade → train → infer → eval → compare.
//!
//! Everything is written under the configured output directory, which must
//! be empty or absent, and only files the run wrote itself are read back.
//! Held-out predictions are compared against a bilinear baseline.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use flimsr_core::dataset::split_patients;
use flimsr_core::metrics::MetricConstants;
use flimsr_core::rng::{derive_seed, stage};
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_json, sidecar_path, ModelKind};
use crate::config::ExperimentConfig;
use crate::data::{degrade_dir, find_raw_images, patient_of, DegradeIndex, DegradeOptions, DEGRADE_INDEX};
use crate::error::{Error, Result};
use crate::ops::{
    bilinear_baseline, compare_reports, ensure_dir, eval_dirs, infer_path, phantom, save_comparisons, save_report,
    train_bbdm, train_cgan, InferOptions, TrainOutputs, CHECKPOINT_FILE,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const BASELINE_REPORT_FILE: &str = "report_bilinear.json";
pub const TTEST_FILE: &str = "ttests.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
    pub checkpoint: PathBuf,
    pub preprocessing_stats: Vec<PathBuf>,
    pub report: PathBuf,
    pub baseline_report: PathBuf,
    pub ttests: PathBuf,
    /// Every file the run wrote, relative to the output directory, sorted.
    pub artifacts: Vec<PathBuf>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn check_fresh(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pipeline runs need a fresh directory",
                dir.display()
            )));
        }
    }
    Ok(())
}

fn stats_paths(dir: &Path, index: &DegradeIndex) -> Vec<PathBuf> {
    index.items.iter().map(|i| dir.join(i.stats())).collect()
}

pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let started_at = now();
    let out = config.output_dir.clone();
    check_fresh(&out)?;
    ensure_dir(&out)?;
    let mut artifacts: Vec<PathBuf> = Vec::new();
    save_json(config, &out.join("config.json"))?;
    artifacts.push(out.join("config.json"));

    let raw = match &config.data_dir {
        Some(dir) => dir.clone(),
        None => {
            let dir = out.join("phantom");
            info!("generating phantom dataset");
            artifacts.extend(phantom(&config.phantom_spec(), config.seed, &dir)?);
            dir
        }
    };

    let mut patients: Vec<String> = find_raw_images(&raw)?.iter().map(|r| patient_of(r)).collect();
    patients.dedup();
    let split = split_patients(&patients, config.train_patients, derive_seed(config.seed, stage::SPLIT))?;
    save_json(&split, &out.join("split.json"))?;
    artifacts.push(out.join("split.json"));

    let opts = DegradeOptions {
        k: config.k,
        clip_percentile: config.clip_percentile,
        norm_scope: config.norm_scope,
    };
    let (train_dir, test_dir) = (out.join("data/train"), out.join("data/test"));
    info!("degrading with k = {}", config.k);
    let train_index = degrade_dir(&raw, &train_dir, opts, Some(&|p: &str| split.train_ids.contains(p)))?;
    let test_index = degrade_dir(&raw, &test_dir, opts, Some(&|p: &str| split.test_ids.contains(p)))?;
    if test_index.items.len() < 2 {
        return Err(Error::Config(format!(
            "held-out set has {} image(s); the paired t-tests need at least 2",
            test_index.items.len()
        )));
    }
    for (dir, index) in [(&train_dir, &train_index), (&test_dir, &test_index)] {
        artifacts.push(dir.join(DEGRADE_INDEX));
        for item in &index.items {
            artifacts.extend([dir.join(item.lr()), dir.join(item.hr()), dir.join(item.stats())]);
        }
    }

    let model_dir = out.join("model");
    let trained: TrainOutputs = match config.model {
        ModelKind::Cgan => train_cgan(&config.train_config(), &train_dir, &model_dir, Some(config.patch_px))?,
        ModelKind::Bbdm => {
            train_bbdm(&config.bbdm_config(), &train_dir, &model_dir.join(CHECKPOINT_FILE), Some(config.patch_px))?
        }
    };
    artifacts.extend([
        trained.checkpoint.clone(),
        sidecar_path(&trained.checkpoint),
        trained.history.clone(),
    ]);
    if config.checkpoint_interval > 0 {
        for step in (config.checkpoint_interval..=config.steps).step_by(config.checkpoint_interval) {
            let p = model_dir.join(format!("step_{step:06}.ckpt"));
            artifacts.extend([sidecar_path(&p), p]);
        }
    }

    info!("running held-out inference");
    let infer_opts = InferOptions {
        model: Some(config.model),
        stats: None,
        tile_px: config.tile_px,
        sampling_steps: config.sampling_steps,
        seed: config.seed,
    };
    artifacts.extend(infer_path(&trained.checkpoint, &test_dir, &out.join("pred"), &infer_opts)?);
    artifacts.extend(bilinear_baseline(&test_dir, &out.join("pred_bilinear"), config.k)?);

    let constants = MetricConstants::new(config.data_range)?;
    let report = eval_dirs(&out.join("pred"), &test_dir, &constants, config.ssim_mode)?;
    let baseline = eval_dirs(&out.join("pred_bilinear"), &test_dir, &constants, config.ssim_mode)?;
    let (report_path, baseline_path, ttest_path) =
        (out.join(REPORT_FILE), out.join(BASELINE_REPORT_FILE), out.join(TTEST_FILE));
    save_report(&report, &report_path)?;
    save_report(&baseline, &baseline_path)?;
    save_comparisons(&compare_reports(&report, &baseline)?, &ttest_path)?;
    artifacts.extend([report_path.clone(), baseline_path.clone(), ttest_path.clone()]);

    let manifest_path = out.join(MANIFEST_FILE);
    artifacts.push(manifest_path.clone());
    let mut artifacts: Vec<PathBuf> = artifacts
        .into_iter()
        .map(|p| p.strip_prefix(&out).map(Path::to_path_buf).unwrap_or(p))
        .collect();
    artifacts.sort();
    artifacts.dedup();
    let manifest = RunManifest {
        config: config.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at,
        finished_at: now(),
        train_patients: split.train_ids.iter().cloned().collect(),
        test_patients: split.test_ids.iter().cloned().collect(),
        checkpoint: trained.checkpoint,
        preprocessing_stats: stats_paths(&test_dir, &test_index),
        report: report_path,
        baseline_report: baseline_path,
        ttests: ttest_path,
        artifacts,
    };
    save_json(&manifest, &manifest_path)?;
    info!("wrote {}", manifest_path.display());
    Ok(manifest)
}
