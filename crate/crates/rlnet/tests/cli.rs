//! End-to-end runs of the command-line binary. Every subcommand executes
//! against a temporary directory at toy sizes; the train/derain/eval chain
//! reuses one checkpoint so the whole workflow is exercised as a user would.

use std::path::Path;
use std::process::{Command, Output};

fn rlnet(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rlnet"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary should spawn")
}

fn run_ok(args: &[&str], envs: &[(&str, &str)]) -> String {
    let out = rlnet(args, envs);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str]) -> String {
    let out = rlnet(args, &[]);
    assert!(!out.status.success(), "command {args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn schedule_dump_prints_the_golden_table() {
    let stdout = run_ok(&["--command", "schedule-dump"], &[]);
    assert_eq!(stdout, include_str!("golden/schedule_full.csv"));
}

#[test]
fn schedule_dump_writes_into_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["--command", "schedule-dump", "--desk-scale", "0.1", "--out", out], &[]);
    let csv = read(&dir.path().join("schedule.csv"));
    // 9 stage-1 rows, 24 stage-2 rows, one header.
    assert_eq!(csv.lines().count(), 34);
}

#[test]
fn env_output_directory_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["--command", "schedule-dump", "--desk-scale", "0.1"], &[("RLNET_OUT", out)]);
    assert!(dir.path().join("schedule.csv").is_file());
}

#[test]
fn gen_data_writes_sample_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(
        &[
            "--command", "gen-data",
            "--seed", "7",
            "--set", "dataset_size=2",
            "--set", "train_size=64",
            "--out", out,
        ],
        &[],
    );
    let mut dirs: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    assert_eq!(dirs.len(), 2);
    for d in &dirs {
        for name in ["rainy.png", "clean.png", "residual.png"] {
            assert!(d.join(name).is_file(), "{} missing {name}", d.display());
        }
    }
    let img = rlnet::data::read_png(&dirs[0].join("rainy.png")).unwrap();
    assert_eq!(img.dim(), (3, 64, 64));
}

#[test]
fn train_derain_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();

    // Tiny but real two-stage run: desk scale 0.01 compresses the schedule
    // to one stage-1 epoch and two stage-2 epochs; explicit size overrides
    // keep the images at the smallest valid geometry.
    let shrink = [
        "--set", "train_size=64",
        "--set", "width=8",
        "--set", "dataset_size=2",
    ];
    let mut args = vec![
        "--command", "train",
        "--seed", "11",
        "--desk-scale", "0.01",
        "--out", out,
        "--checkpoint", ckpt_s,
    ];
    args.extend_from_slice(&shrink);
    let stdout = run_ok(&args, &[]);
    assert!(stdout.contains("final epoch"), "train should report its last epoch: {stdout}");
    assert!(ckpt.is_file());
    let log = read(&dir.path().join("train_log.csv"));
    assert!(log.starts_with("epoch,stage,lr,"));
    assert_eq!(log.lines().count(), 4, "header plus three epochs:\n{log}");

    // Derain a synthetic rainy image with the trained checkpoint.
    let sample_dir = dir.path().join("pair");
    let rain = rlnet::data::RainParams { seed: 5, ..Default::default() };
    let sample = rlnet::data::synthesize_rain(
        &rlnet::data::Image::from_elem((3, 64, 64), 0.5),
        &rain,
    )
    .unwrap();
    rlnet::data::write_sample_dir(&sample, &sample_dir).unwrap();
    let rainy_png = sample_dir.join("rainy.png");
    let derain_out = dir.path().join("derained");
    run_ok(
        &[
            "--command", "derain",
            "--checkpoint", ckpt_s,
            "--input", rainy_png.to_str().unwrap(),
            "--out", derain_out.to_str().unwrap(),
        ],
        &[],
    );
    let cleaned = rlnet::data::read_png(&derain_out.join("derained_rainy.png")).unwrap();
    assert_eq!(cleaned.dim(), (3, 64, 64));
    assert!(cleaned.iter().all(|&v| (0.0..=1.0).contains(&v)));

    // Score the checkpoint on a fresh synthetic split.
    let eval_out = dir.path().join("eval");
    let mut args = vec![
        "--command", "eval",
        "--seed", "13",
        "--checkpoint", ckpt_s,
        "--out", eval_out.to_str().unwrap(),
    ];
    args.extend_from_slice(&shrink);
    let stdout = run_ok(&args, &[]);
    assert!(stdout.contains("mean"), "eval should print the mean row: {stdout}");
    let report = read(&eval_out.join("eval_report.csv"));
    assert!(report.starts_with("name,psnr_db,ssim\n"));
    assert_eq!(report.lines().count(), 4, "two images plus mean plus header:\n{report}");
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = run_ok(
        &[
            "--command", "sweep",
            "--seed", "3",
            "--set", "sweep_param=theta2",
            "--set", "sweep_values=0.05,0.15",
            "--set", "width=8",
            "--set", "train_size=32",
            "--set", "dataset_size=1",
            "--set", "toy_epochs=1",
            "--out", out,
        ],
        &[],
    );
    assert!(stdout.starts_with("theta2,psnr_db,ssim"));
    let csv = read(&dir.path().join("sweep.csv"));
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("\n0.05,"));
    assert!(csv.contains("\n0.15,"));
}

#[test]
fn ablate_covers_the_requested_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(
        &[
            "--command", "ablate",
            "--seed", "3",
            "--set", "variants=M1,M7",
            "--set", "width=8",
            "--set", "train_size=32",
            "--set", "dataset_size=1",
            "--set", "toy_epochs=1",
            "--out", out,
        ],
        &[],
    );
    let csv = read(&dir.path().join("ablation.csv"));
    assert!(csv.starts_with("variant,psnr_db,ssim\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("\nM1,"));
    assert!(csv.contains("\nM7,"));
}

#[test]
fn mistyped_commands_and_missing_inputs_fail_with_guidance() {
    let err = run_err(&["--command", "derian"]);
    assert!(err.contains("unknown command"), "stderr was: {err}");
    assert!(err.contains("schedule-dump"), "should list the valid commands: {err}");

    let err = run_err(&["--command", "derain", "--out", "/tmp"]);
    assert!(err.contains("--checkpoint"), "stderr was: {err}");
}
