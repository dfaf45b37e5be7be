//! CLI behaviour: stage ordering errors, overwrite protection, config
//! validation, and exit codes, driven through the real binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_difflab")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.config");
    std::fs::write(
        &p,
        "seed = 9\n\
         schedule.t_train = 120\n\
         schedule.t_infer = 6\n\
         model.hidden_width = 24\n\
         model.time_feature_dim = 8\n\
         model.cond_dim = 6\n\
         data.per_domain = 8\n\
         data.eval_count = 2\n\
         train.epochs = 2\n\
         train.batch_size = 8\n\
         rewrite.inner_steps = 2\n\
         align.outer_steps = 3\n\
         oracle.epochs = 50\n",
    )
    .unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

#[test]
fn missing_inputs_fail_with_category() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "train",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[missing-input]"), "{stderr}");
    assert!(stderr.contains("generate-data"), "{stderr}");
}

#[test]
fn unknown_config_key_fails_with_config_category() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.config");
    std::fs::write(&p, "train.speed = 9\n").unwrap();
    let out = run(&["--config", p.to_str().unwrap(), "pipeline"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[config]"), "{stderr}");
    assert!(stderr.contains("train.speed"), "{stderr}");
}

#[test]
fn stages_refuse_to_overwrite_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "generate-data",
    ];
    assert!(run(&args).status.success());
    let second = run(&args);
    assert!(!second.status.success());
    let stderr = String::from_utf8_lossy(&second.stderr);
    assert!(stderr.contains("error[would-overwrite]"), "{stderr}");
    // with --overwrite it succeeds
    let mut with_flag: Vec<&str> = args.to_vec();
    with_flag.push("--overwrite");
    assert!(run(&with_flag).status.success());
}

#[test]
fn conflicting_config_in_same_out_dir_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    assert!(run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "generate-data"
    ])
    .status
    .success());
    // same directory, different seed -> config error
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "1234",
        "train",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("different effective config"), "{stderr}");
}

#[test]
fn seed_override_lands_in_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    assert!(run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "777",
        "generate-data"
    ])
    .status
    .success());
    let text = std::fs::read_to_string(out_dir.join("effective.config")).unwrap();
    assert!(text.contains("seed = 777"), "{text}");
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("env_out");
    let out = Command::new(bin())
        .args(["--config", cfg.to_str().unwrap(), "generate-data"])
        .env("DIFFLAB_OUT", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out_dir.join("dataset/train.index").exists());
}
