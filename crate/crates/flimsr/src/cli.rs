//! Argument parsing and subcommand dispatch for the `flimsr` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flimsr_core::degrade::{NormScope, DEFAULT_CLIP_PERCENTILE};
use flimsr_core::gan::DEFAULT_TILE_PX;
use flimsr_core::metrics::{MetricConstants, SsimMode};
use flimsr_core::phantom::PhantomSpec;
use log::info;

use crate::checkpoint::{read_json, ModelKind};
use crate::config::ExperimentConfig;
use crate::data::{degrade_dir, read_index, DegradeOptions};
use crate::error::{Error, Result};
use crate::flimb::read_flimb;
use crate::ops::{self, InferOptions};
use crate::pipeline;
use crate::spectrum::{channel_spectrum, save_spectrum_csv};

#[derive(Debug, Parser)]
#[command(name = "flimsr", version, about = "Pixel super-resolution for multi-channel FLIM images")]
pub struct Cli {
    /// Worker threads for matrix products.
    #[arg(long, global = true, env = "FLIMSR_THREADS")]
    pub threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset, one directory per patient.
    Phantom(PhantomArgs),
    /// Block-average, clip and normalize a raw dataset.
    Degrade(DegradeArgs),
    /// Train the conditional GAN.
    Train(TrainArgs),
    /// Train the Brownian-bridge diffusion baseline.
    TrainBbdm(TrainArgs),
    /// Super-resolve one image or a degraded directory.
    Infer(InferArgs),
    /// Score predictions against targets.
    Eval(EvalArgs),
    /// Radially averaged power spectrum of one channel.
    Spectrum(SpectrumArgs),
    /// Paired t-tests between two reports.
    Compare(CompareArgs),
    /// Run phantom → degrade → train → infer → eval → compare.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub fovs: Option<usize>,
    /// Field-of-view edge in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Wsi,
    Patch,
}

impl From<ScopeArg> for NormScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Wsi => NormScope::Wsi,
            ScopeArg::Patch => NormScope::Patch,
        }
    }
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLIP_PERCENTILE)]
    pub clip: f64,
    #[arg(long, value_enum, default_value = "wsi")]
    pub norm_scope: ScopeArg,
}

/// Shared by `train` and `train-bbdm`. Flags override `--config` values.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Defaults to the factor recorded in the degraded dataset.
    #[arg(long)]
    pub k: Option<usize>,
    /// Output of `flimsr degrade`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory (`train`) or checkpoint file (`train-bbdm`).
    #[arg(long)]
    pub out: PathBuf,
    /// Experiment config supplying defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Cgan,
    Bbdm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Cgan => ModelKind::Cgan,
            ModelArg::Bbdm => ModelKind::Bbdm,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A `.flimb` file, or a degraded directory of `*.lr.flimb` files.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checked against the checkpoint; inferred when omitted.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Preprocessing statistics; defaults to `<stem>.stats.json` beside the input.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TILE_PX)]
    pub tile: usize,
    /// Reverse diffusion steps (bbdm); defaults to all.
    #[arg(long)]
    pub sampling_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SsimArg {
    Global,
    Windowed,
}

impl From<SsimArg> for SsimMode {
    fn from(s: SsimArg) -> Self {
        match s {
            SsimArg::Global => SsimMode::Global,
            SsimArg::Windowed => SsimMode::Windowed,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "global")]
    pub ssim: SsimArg,
    /// Dynamic range `L` of the images.
    #[arg(long, default_value_t = 1.0)]
    pub data_range: f64,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub channel: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Candidate report.
    #[arg(long)]
    pub a: PathBuf,
    /// Reference report.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on failure, 2 on a usage error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        // The GEMM backend reads this once, on first use.
        Some(n) => {
            std::env::set_var("MATMUL_NUM_THREADS", n.to_string());
            Ok(())
        }
        None => Ok(()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    set_threads(cli.threads)?;
    match cli.command {
        Command::Phantom(a) => {
            let d = PhantomSpec::default();
            let spec = PhantomSpec {
                n_patients: a.patients.unwrap_or(d.n_patients),
                fovs_per_patient: a.fovs.unwrap_or(d.fovs_per_patient),
                fov_size: a.size.unwrap_or(d.fov_size),
                ..d
            };
            let files = ops::phantom(&spec, a.seed, &a.out)?;
            info!("wrote {} fields of view to {}", files.len(), a.out.display());
        }
        Command::Degrade(a) => {
            let opts = DegradeOptions {
                k: a.k,
                clip_percentile: a.clip,
                norm_scope: a.norm_scope.into(),
            };
            let index = degrade_dir(&a.input, &a.out, opts, None)?;
            info!("degraded {} images into {}", index.items.len(), a.out.display());
        }
        Command::Train(a) => {
            let cfg = training_config(&a)?;
            let out = ops::train_cgan(&cfg.train_config(), &a.data, &a.out, Some(cfg.patch_px))?;
            info!("wrote {}", out.checkpoint.display());
        }
        Command::TrainBbdm(a) => {
            let cfg = training_config(&a)?;
            let out = ops::train_bbdm(&cfg.bbdm_config(), &a.data, &a.out, Some(cfg.patch_px))?;
            info!("wrote {}", out.checkpoint.display());
        }
        Command::Infer(a) => {
            let opts = InferOptions {
                model: a.model.map(Into::into),
                stats: a.stats,
                tile_px: a.tile,
                sampling_steps: a.sampling_steps,
                seed: a.seed,
            };
            let files = ops::infer_path(&a.ckpt, &a.input, &a.out, &opts)?;
            info!("wrote {} image(s)", files.len());
        }
        Command::Eval(a) => {
            let constants = MetricConstants::new(a.data_range)?;
            let report = ops::eval_dirs(&a.pred, &a.target, &constants, a.ssim.into())?;
            ops::save_report(&report, &a.out)?;
            info!("scored {} pairs into {}", report.pairs.len(), a.out.display());
        }
        Command::Spectrum(a) => {
            let image = read_flimb(&a.input)?;
            let spectrum = channel_spectrum(&image, &a.channel).map_err(|e| e.context(&a.input))?;
            save_spectrum_csv(&spectrum, &a.out)?;
        }
        Command::Compare(a) => {
            let ra = read_json(&a.a)?;
            let rb = read_json(&a.b)?;
            let tests = ops::compare_reports(&ra, &rb)?;
            ops::save_comparisons(&tests, &a.out)?;
            info!("wrote {} comparisons to {}", tests.len(), a.out.display());
        }
        Command::Pipeline(a) => {
            let mut cfg = ExperimentConfig::load(&a.config)?;
            if let Some(out) = a.out {
                cfg.output_dir = out;
            }
            cfg.k = a.k.unwrap_or(cfg.k);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.steps = a.steps.unwrap_or(cfg.steps);
            if let Some(m) = a.model {
                cfg.model = m.into();
            }
            let manifest = pipeline::run(&cfg)?;
            println!("{}", cfg.output_dir.join(pipeline::MANIFEST_FILE).display());
            info!("report: {}", manifest.report.display());
        }
    }
    Ok(())
}

/// Experiment settings for a training command: defaults, then the config
/// file, then flags. `k` falls back to the dataset's own factor.
fn training_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let mut c = ExperimentConfig::default();
            c.k = dataset_factor(&a.data)?;
            c
        }
    };
    let o = |flag: Option<usize>, v: &mut usize| *v = flag.unwrap_or(*v);
    o(a.k, &mut cfg.k);
    o(a.steps, &mut cfg.steps);
    o(a.batch_size, &mut cfg.batch_size);
    o(a.base_channels, &mut cfg.base_channels);
    o(a.levels, &mut cfg.levels);
    o(a.patch, &mut cfg.patch_px);
    o(a.checkpoint_interval, &mut cfg.checkpoint_interval);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.alpha = a.alpha.or(cfg.alpha);
    Ok(cfg)
}

fn dataset_factor(data: &Path) -> Result<usize> {
    Ok(read_index(data)?.k)
}
