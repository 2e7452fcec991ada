//! The work behind each subcommand, callable without going through argv.

use std::fs;
use std::path::{Path, PathBuf};

use flimsr_core::bbdm::{bbdm_infer, train_bbdm_with, BbdmHistory, BbdmTrainConfig, Denoiser};
use flimsr_core::degrade::{bilinear_resize, PreprocessStats, DEFAULT_PATCH_PX};
use flimsr_core::gan::{infer, train_with, StepRecord, TrainConfig, TrainHistory, TrainObserver, DEFAULT_TILE_PX};
use flimsr_core::metrics::{evaluate, MetricConstants, MetricKind, MetricReport, SsimMode};
use flimsr_core::networks::{Discriminator, Generator};
use flimsr_core::phantom::{generate_phantom, PhantomSpec};
use flimsr_core::stats::{paired_ttest, MetricDirection, TTestResult};
use flimsr_core::FlimImage;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    load_denoiser, load_generator, load_meta, load_stats, save_bbdm, save_cgan, save_json, CheckpointMeta, ModelKind,
};
use crate::data::{
    find_files, load_training_pairs, strip_suffix, write_patients, stats_path_for, FLIMB_EXT, HR_SUFFIX, LR_SUFFIX,
};
use crate::error::{Error, Result};
use crate::flimb::{read_flimb, write_flimb};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

pub fn phantom(spec: &PhantomSpec, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let records = generate_phantom(spec, seed)?;
    ensure_dir(out)?;
    write_patients(&records, out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes serializable rows as CSV with a header from the field names.
pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Training history columns: step, g_loss, d_loss, l1_term, adv_term.
pub fn write_history_csv(history: &TrainHistory, path: &Path) -> Result<()> {
    write_csv(&history.steps, path)
}

pub fn write_bbdm_history_csv(history: &BbdmHistory, path: &Path) -> Result<()> {
    write_csv(&history.steps, path)
}

/// Saves intermediate checkpoints and logs progress.
struct CheckpointWriter<'a> {
    dir: &'a Path,
    config: &'a TrainConfig,
    log_every: usize,
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_step(&mut self, r: &StepRecord) {
        if r.step == 1 || r.step % self.log_every == 0 {
            info!(
                "step {} g_loss {:.5} d_loss {:.5} l1 {:.5} adv {:.5}",
                r.step, r.g_loss, r.d_loss, r.l1_term, r.adv_term
            );
        }
    }

    fn on_checkpoint(&mut self, step: usize, g: &Generator, d: &Discriminator) -> flimsr_core::Result<()> {
        let path = self.dir.join(format!("step_{step:06}.ckpt"));
        let meta = CheckpointMeta::for_cgan(self.config, step).map_err(|e| flimsr_core::Error::InvalidArgument(e.to_string()))?;
        save_cgan(&path, g, d, &meta).map_err(|e| flimsr_core::Error::InvalidArgument(e.to_string()))
    }
}

fn log_interval(steps: usize) -> usize {
    (steps / 20).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

/// Patch edge used for training: must suit both networks' strides.
pub fn patch_multiple(config: &TrainConfig) -> usize {
    config.generator.size_multiple().max(config.discriminator.size_multiple())
}

pub fn train_cgan(config: &TrainConfig, data: &Path, out_dir: &Path, patch_px: Option<usize>) -> Result<TrainOutputs> {
    config.validate()?;
    let pairs = load_training_pairs(data, config.k, patch_px.unwrap_or(DEFAULT_PATCH_PX), patch_multiple(config))?;
    info!("training cgan on {} pairs for {} steps", pairs.len(), config.steps);
    ensure_dir(out_dir)?;
    let mut observer = CheckpointWriter {
        dir: out_dir,
        config,
        log_every: log_interval(config.steps),
    };
    let (g, d, history) = train_with(config, &pairs, &[], &mut observer)?;
    let outputs = TrainOutputs {
        checkpoint: out_dir.join(CHECKPOINT_FILE),
        history: out_dir.join(HISTORY_FILE),
    };
    save_cgan(&outputs.checkpoint, &g, &d, &CheckpointMeta::for_cgan(config, config.steps)?)?;
    write_history_csv(&history, &outputs.history)?;
    Ok(outputs)
}

/// `ckpt` is the checkpoint file; history goes next to it.
pub fn train_bbdm(config: &BbdmTrainConfig, data: &Path, ckpt: &Path, patch_px: Option<usize>) -> Result<TrainOutputs> {
    config.schedule()?;
    let multiple = config.denoiser.size_multiple();
    let pairs = load_training_pairs(data, config.k, patch_px.unwrap_or(DEFAULT_PATCH_PX), multiple)?;
    info!("training bbdm on {} pairs for {} steps", pairs.len(), config.steps);
    ensure_parent(ckpt)?;
    let ckpt_dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut save_interim = |step: usize, d: &Denoiser| -> flimsr_core::Result<()> {
        let path = ckpt_dir.join(format!("step_{step:06}.ckpt"));
        let wrap = |e: Error| flimsr_core::Error::InvalidArgument(e.to_string());
        save_bbdm(&path, d, &CheckpointMeta::for_bbdm(config, step).map_err(wrap)?).map_err(wrap)
    };
    let (denoiser, history) = train_bbdm_with(config, &pairs, &mut save_interim)?;
    let mut history_path = ckpt.as_os_str().to_owned();
    history_path.push(".history.csv");
    let outputs = TrainOutputs {
        checkpoint: ckpt.to_path_buf(),
        history: PathBuf::from(history_path),
    };
    save_bbdm(ckpt, &denoiser, &CheckpointMeta::for_bbdm(config, config.steps)?)?;
    write_bbdm_history_csv(&history, &outputs.history)?;
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    /// Expected model kind; checked against the checkpoint when given.
    pub model: Option<ModelKind>,
    /// Statistics file for single-image inference; defaults to the
    /// `<stem>.stats.json` next to each input.
    pub stats: Option<PathBuf>,
    pub tile_px: usize,
    /// Reverse diffusion steps; `None` runs all of them.
    pub sampling_steps: Option<usize>,
    pub seed: u64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            model: None,
            stats: None,
            tile_px: DEFAULT_TILE_PX,
            sampling_steps: None,
            seed: 0,
        }
    }
}

enum Model {
    Cgan(Generator),
    Bbdm(Denoiser, CheckpointMeta),
}

fn load_model(ckpt: &Path, expected: Option<ModelKind>) -> Result<(Model, usize)> {
    let meta = load_meta(ckpt)?;
    if let Some(kind) = expected {
        if kind != meta.model {
            return Err(Error::Config(format!(
                "--model {} does not match checkpoint model {}",
                kind_name(kind),
                kind_name(meta.model)
            )));
        }
    }
    Ok(match meta.model {
        ModelKind::Cgan => (Model::Cgan(load_generator(ckpt)?.0), meta.k),
        ModelKind::Bbdm => {
            let (d, meta) = load_denoiser(ckpt)?;
            let k = meta.k;
            (Model::Bbdm(d, meta), k)
        }
    })
}

pub fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Cgan => "cgan",
        ModelKind::Bbdm => "bbdm",
    }
}

fn run_model(model: &Model, k: usize, lr: &FlimImage, stats: &PreprocessStats, opts: &InferOptions) -> Result<FlimImage> {
    let target = (lr.height() * k, lr.width() * k);
    Ok(match model {
        Model::Cgan(g) => infer(g, lr, target, Some(stats), opts.tile_px)?,
        Model::Bbdm(d, meta) => {
            let schedule = meta.schedule()?;
            let steps = opts.sampling_steps.unwrap_or(schedule.total());
            bbdm_infer(d, lr, target, Some(stats), &schedule, steps, opts.tile_px, opts.seed)?
        }
    })
}

/// Statistics for an input: the explicit file, else the sidecar next to it.
fn stats_for(input: &Path, explicit: Option<&Path>) -> Result<PreprocessStats> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| stats_path_for(input));
    if !path.exists() {
        return Err(Error::File {
            path: input.to_path_buf(),
            message: format!(
                "{} (expected {}; pass --stats)",
                flimsr_core::Error::MissingPreprocessingStats,
                path.display()
            ),
        });
    }
    load_stats(&path)
}

/// Runs a checkpoint on one `.flimb` file or on every `*.lr.flimb` under a
/// directory. Directory outputs mirror the input tree as `<id>.flimb`.
pub fn infer_path(ckpt: &Path, input: &Path, output: &Path, opts: &InferOptions) -> Result<Vec<PathBuf>> {
    let (model, k) = load_model(ckpt, opts.model)?;
    if input.is_dir() {
        let files = find_files(input, LR_SUFFIX)?;
        if files.is_empty() {
            return Err(Error::File {
                path: input.to_path_buf(),
                message: format!("no *{LR_SUFFIX} images found"),
            });
        }
        let mut written = Vec::new();
        for rel in files {
            let src = input.join(&rel);
            let dst = output.join(format!("{}{FLIMB_EXT}", strip_suffix(&rel, LR_SUFFIX)));
            let stats = stats_for(&src, None)?;
            let y = run_model(&model, k, &read_flimb(&src)?, &stats, opts).map_err(|e| e.context(&src))?;
            ensure_parent(&dst)?;
            write_flimb(&y, &dst)?;
            info!("wrote {}", dst.display());
            written.push(dst);
        }
        Ok(written)
    } else {
        let stats = stats_for(input, opts.stats.as_deref())?;
        let y = run_model(&model, k, &read_flimb(input)?, &stats, opts).map_err(|e| e.context(input))?;
        ensure_parent(output)?;
        write_flimb(&y, output)?;
        Ok(vec![output.to_path_buf()])
    }
}

/// Reference predictions: normalized input resized bilinearly by `k`.
pub fn bilinear_baseline(input: &Path, output: &Path, k: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for rel in find_files(input, LR_SUFFIX)? {
        let src = input.join(&rel);
        let lr = read_flimb(&src)?;
        let norm = stats_for(&src, None)?.apply(&lr)?;
        let mut up = bilinear_resize(&norm, lr.height() * k, lr.width() * k)?;
        up.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let dst = output.join(format!("{}{FLIMB_EXT}", strip_suffix(&rel, LR_SUFFIX)));
        ensure_parent(&dst)?;
        write_flimb(&up, &dst)?;
        written.push(dst);
    }
    Ok(written)
}

/// Pairs `<id>.hr.flimb` targets (or plain `<id>.flimb`) with `<id>.flimb`
/// predictions and evaluates them in sorted id order.
pub fn eval_dirs(pred: &Path, target: &Path, constants: &MetricConstants, mode: SsimMode) -> Result<MetricReport> {
    let mut targets = find_files(target, HR_SUFFIX)?;
    let hr_layout = !targets.is_empty();
    if !hr_layout {
        targets = find_files(target, FLIMB_EXT)?;
    }
    if targets.is_empty() {
        return Err(Error::File {
            path: target.to_path_buf(),
            message: "no target images found".into(),
        });
    }
    let mut loaded = Vec::with_capacity(targets.len());
    for rel in &targets {
        let id = strip_suffix(rel, if hr_layout { HR_SUFFIX } else { FLIMB_EXT }).to_string();
        let pred_path = pred.join(format!("{id}{FLIMB_EXT}"));
        if !pred_path.exists() {
            return Err(Error::File {
                path: pred_path,
                message: format!("missing prediction for target {id}"),
            });
        }
        loaded.push((id, read_flimb(&pred_path)?, read_flimb(target.join(rel))?));
    }
    let triples: Vec<(String, &FlimImage, &FlimImage)> = loaded.iter().map(|(id, p, t)| (id.clone(), p, t)).collect();
    Ok(evaluate(&triples, constants, mode, None)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub channel: String,
    pub metric: MetricKind,
    pub result: TTestResult,
}

/// Paired t-tests of report `a` against report `b` for every channel and
/// metric both carry. Pair ids must match one to one. Series holding
/// non-finite values are skipped.
pub fn compare_reports(a: &MetricReport, b: &MetricReport) -> Result<Vec<Comparison>> {
    let ids = |r: &MetricReport| r.pairs.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::Config("reports cover different image pairs".into()));
    }
    let mut out = Vec::new();
    for ch in &a.channels {
        for metric in [MetricKind::Mse, MetricKind::Psnr, MetricKind::Ssim, MetricKind::Perceptual] {
            let (Some(xa), Some(xb)) = (a.series(&ch.channel, metric), b.series(&ch.channel, metric)) else {
                continue;
            };
            // A perfect reconstruction has infinite PSNR; no t statistic exists.
            if xa.iter().chain(&xb).any(|v| !v.is_finite()) {
                warn!("skipping {} {}: non-finite values", ch.channel, metric.name());
                continue;
            }
            let direction = if metric.higher_is_better() {
                MetricDirection::HigherIsBetter
            } else {
                MetricDirection::LowerIsBetter
            };
            out.push(Comparison {
                channel: ch.channel.clone(),
                metric,
                result: paired_ttest(&xa, &xb, direction)?,
            });
        }
    }
    Ok(out)
}

pub fn save_report(report: &MetricReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    save_json(report, path)
}

pub fn save_comparisons(c: &[Comparison], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    save_json(&c, path)
}
