use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flimsr::config::ExperimentConfig;
use flimsr::pipeline::RunManifest;
use walkdir::WalkDir;

fn flimsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flimsr"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = flimsr(&["degrade", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage:"), "{}", stderr(&o));
    assert_eq!(flimsr(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn out_of_range_factor_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flimsr(&["degrade", "--k", "9", "--in", p(tmp.path()), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("k out of supported range 2..7"), "{}", stderr(&o));
}

#[test]
fn zero_threads_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = flimsr(&["--threads", "0", "phantom", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_flimsr"))
        .args(["phantom", "--out", p(tmp.path()), "--patients", "1", "--fovs", "1", "--size", "64", "-q"])
        .env("FLIMSR_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

/// phantom → degrade → train → infer → eval → spectrum → compare, one
/// subcommand at a time.
#[test]
fn subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let run = |args: &[&str]| {
        let o = flimsr(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    };
    run(&["phantom", "--out", p(&t.join("raw")), "--patients", "2", "--fovs", "1", "--size", "64", "--seed", "3"]);
    run(&["degrade", "--k", "2", "--in", p(&t.join("raw")), "--out", p(&t.join("deg"))]);
    run(&[
        "train", "--data", p(&t.join("deg")), "--out", p(&t.join("model")), "--steps", "3", "--base-channels", "4",
        "--levels", "2", "--batch-size", "2",
    ]);
    let history = std::fs::read_to_string(t.join("model/history.csv")).unwrap();
    assert!(history.starts_with("step,g_loss,d_loss,l1_term,adv_term\n"));
    assert_eq!(history.lines().count(), 4);

    let ckpt = t.join("model/model.ckpt");
    run(&["infer", "--ckpt", p(&ckpt), "--in", p(&t.join("deg")), "--out", p(&t.join("pred"))]);
    assert!(t.join("pred/P01/fov_0.flimb").exists());

    // Single file with explicit statistics.
    run(&[
        "infer", "--model", "cgan", "--ckpt", p(&ckpt), "--in", p(&t.join("deg/P00/fov_0.lr.flimb")), "--out",
        p(&t.join("one.flimb")), "--stats", p(&t.join("deg/P00/fov_0.stats.json")),
    ]);
    let one = flimsr::flimb::read_flimb(t.join("one.flimb")).unwrap();
    assert_eq!(one, flimsr::flimb::read_flimb(t.join("pred/P00/fov_0.flimb")).unwrap());
    assert_eq!((one.height(), one.width()), (64, 64));

    // Wrong model kind and missing statistics are errors.
    let o = flimsr(&["infer", "--model", "bbdm", "--ckpt", p(&ckpt), "--in", p(&t.join("deg")), "--out", p(&t.join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = flimsr(&["infer", "--ckpt", p(&ckpt), "--in", p(&t.join("raw/P00/fov_0.flimb")), "--out", p(&t.join("y.flimb"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing preprocessing statistics"), "{}", stderr(&o));

    run(&["eval", "--pred", p(&t.join("pred")), "--target", p(&t.join("deg")), "--out", p(&t.join("report.json"))]);
    run(&[
        "eval", "--ssim", "windowed", "--pred", p(&t.join("pred")), "--target", p(&t.join("deg")), "--out",
        p(&t.join("report_w.json")),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pairs"].as_array().unwrap().len(), 2);
    assert_eq!(report["ssim_mode"], "global");

    run(&["spectrum", "--in", p(&t.join("pred/P00/fov_0.flimb")), "--channel", "LT2", "--out", p(&t.join("s.csv"))]);
    let csv = std::fs::read_to_string(t.join("s.csv")).unwrap();
    assert!(csv.starts_with("bin_center_cycles_per_pixel,mean_power\n"));
    let o = flimsr(&["spectrum", "--in", p(&t.join("pred/P00/fov_0.flimb")), "--channel", "LT7", "--out", p(&t.join("z.csv"))]);
    assert_eq!(o.status.code(), Some(1));

    run(&["compare", "--a", p(&t.join("report.json")), "--b", p(&t.join("report_w.json")), "--out", p(&t.join("tt.json"))]);
    let tt: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.join("tt.json")).unwrap()).unwrap();
    assert_eq!(tt.as_array().unwrap().len(), 18);
    assert!(tt[0]["result"]["p_value"].is_number());
}

#[test]
fn train_bbdm_writes_checkpoint_file() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    assert!(flimsr(&["phantom", "--out", p(&t.join("raw")), "--patients", "1", "--fovs", "1", "--size", "64"]).status.success());
    assert!(flimsr(&["degrade", "--k", "4", "--in", p(&t.join("raw")), "--out", p(&t.join("deg"))]).status.success());
    let cfg = ExperimentConfig {
        base_channels: 4,
        levels: 2,
        time_embed_dim: 8,
        diffusion_steps: 20,
        batch_size: 1,
        ..ExperimentConfig::default()
    };
    let cfg_path = t.join("exp.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let ckpt = t.join("bbdm/denoiser.ckpt");
    let o = flimsr(&[
        "train-bbdm", "--k", "4", "--config", p(&cfg_path), "--data", p(&t.join("deg")), "--out", p(&ckpt), "--steps", "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let meta = flimsr::checkpoint::load_meta(&ckpt).unwrap();
    assert_eq!((meta.k, meta.steps_trained), (4, 2));
    let o = flimsr(&[
        "infer", "--ckpt", p(&ckpt), "--in", p(&t.join("deg")), "--out", p(&t.join("pred")), "--sampling-steps", "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let img = flimsr::flimb::read_flimb(t.join("pred/P00/fov_0.flimb")).unwrap();
    assert_eq!(img.height(), 64);
    assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

fn tiny_pipeline_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: out.to_path_buf(),
        n_patients: 3,
        fovs_per_patient: 2,
        fov_size: 64,
        train_patients: 2,
        patch_px: 64,
        steps: 2,
        batch_size: 2,
        base_channels: 4,
        levels: 2,
        disc_base_channels: 4,
        checkpoint_interval: 1,
        ..ExperimentConfig::default()
    }
}

#[test]
fn pipeline_manifest_lists_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("exp.json");
    let cfg = tiny_pipeline_config(Path::new("run"));
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let o = flimsr(&["pipeline", "--config", p(&cfg_path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("run");
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let on_disk: Vec<PathBuf> = WalkDir::new(&out)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(&out).unwrap().to_path_buf())
        .collect();
    let mut on_disk = on_disk;
    on_disk.sort();
    assert_eq!(manifest.artifacts, on_disk);
    assert!(manifest.artifacts.iter().any(|a| a.ends_with("step_000002.ckpt")));
    assert_eq!(manifest.test_patients.len(), 1);
    assert!(manifest.checkpoint.exists() && manifest.report.exists() && manifest.ttests.exists());
    assert!(manifest.preprocessing_stats.iter().all(|s| s.exists()));

    // A second run into the same directory is refused.
    let o = flimsr(&["pipeline", "--config", p(&cfg_path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not empty"));
}
