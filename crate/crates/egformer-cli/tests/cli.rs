//! End-to-end checks of the command-line surface: exit codes, file outputs,
//! and byte-for-byte determinism of repeated runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_egformer"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("egf-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn egformer")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn selfcheck_single_suite_passes() {
    let out = run(&["selfcheck", "--suite", "das"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    assert!(stdout_of(&out).contains("das"));
    assert!(stdout_of(&out).contains("PASS"));
}

#[test]
fn selfcheck_rejects_unknown_suite() {
    let out = run(&["selfcheck", "--suite", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flops_single_block_matches() {
    let out = run(&["flops", "--h", "8", "--w", "8", "--c", "16", "--axis", "h"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("81920"), "{text}");
    assert!(text.contains("MATCH"), "{text}");
}

#[test]
fn flops_model_audit_matches() {
    let out = run(&[
        "flops", "--arch", "E-E-E", "--h", "8", "--w", "16", "--c0", "4", "--heads", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    assert!(stdout_of(&out).contains("MATCH"));
}

#[test]
fn bad_architecture_is_a_usage_error() {
    let dir = tmp_dir("badarch");
    let out = run(&[
        "train-toy",
        "--data",
        dir.to_str().unwrap(),
        "--arch",
        "MM-E-MM",
        "--ckpt",
        dir.join("m.egtn").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("out of scope"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["selfcheck", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let out = run(&[
        "train-toy",
        "--data",
        "/nonexistent-egf-dataset",
        "--ckpt",
        "/tmp/egf-nope.egtn",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dump_bias_writes_pgm_and_csv() {
    let dir = tmp_dir("bias");
    let out = run(&[
        "dump-bias", "--h", "3", "--w", "6", "--rho", "0.1", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    for name in ["erpe_h_0000.pgm", "erpe_h_0002.csv", "erpe_v.pgm", "erpe_v.csv"] {
        assert!(dir.join(name).exists(), "missing {name}");
    }
    // csv matrices are W x W / H x H
    let csv = std::fs::read_to_string(dir.join("erpe_h_0000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 6);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn pipeline_gen_train_eval_round_trip() {
    let dir = tmp_dir("pipeline");
    let data = dir.join("data");
    let out = run(&[
        "gen-data", "--out", data.to_str().unwrap(), "--scenes", "5", "--h", "8", "--w", "16",
        "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    assert!(data.join("manifest.csv").exists());
    assert!(data.join("scenes/0004.pfm").exists());

    let ckpt = dir.join("model.egtn");
    let train = |path: &Path| {
        run(&[
            "train-toy",
            "--data",
            data.to_str().unwrap(),
            "--arch",
            "E-E-E",
            "--steps",
            "5",
            "--lr",
            "1e-2",
            "--seed",
            "3",
            "--c0",
            "4",
            "--heads",
            "2",
            "--ckpt",
            path.to_str().unwrap(),
        ])
    };
    let out = train(&ckpt);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    assert!(ckpt.exists());
    assert!(dir.join("model.egtn.cfg").exists());
    assert!(dir.join("model.egtn.log.csv").exists());

    // identical flags give a bit-identical checkpoint
    let ckpt2 = dir.join("model2.egtn");
    assert_eq!(train(&ckpt2).status.code(), Some(0));
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(&ckpt2).unwrap(),
        "repeated run must be bit-identical"
    );

    let report = dir.join("report.csv");
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("id,s,t,abs_rel"));
    assert!(csv.trim().lines().last().unwrap().starts_with("mean,"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn gradcheck_small_model_passes() {
    let out = run(&[
        "gradcheck", "--arch", "E-E-E", "--h", "8", "--w", "16", "--c0", "4", "--heads", "2",
        "--samples", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout_of(&out));
    assert!(stdout_of(&out).contains("gradcheck PASS"));
}
