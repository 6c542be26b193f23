//! End-to-end checks of the command-line interface and its exit codes.

use std::path::Path;
use std::process::Command;

fn mtlseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mtlseg"))
}

#[test]
fn synth_then_train_then_eval_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");

    let status = mtlseg()
        .args(["synth", "--n", "6", "--size", "16", "--seed", "3"])
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(data.join("img/0005.png").exists());
    assert!(data.join("gt/0005.png").exists());

    let status = mtlseg()
        .args([
            "train",
            "--set",
            "base_channels=2",
            "--set",
            "depth=2",
            "--set",
            "epochs=1",
            "--set",
            "batch_size=2",
        ])
        .arg("--set")
        .arg(format!("data_root={}", data.display()))
        .arg("--out")
        .arg(&out)
        .args(["--seed", "4"])
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = out.join("last.ckpt");
    assert!(ckpt.exists());
    assert!(out.join("best.ckpt").exists());
    assert!(out.join("train_log.csv").exists());
    assert!(out.join("splits.txt").exists());

    let metrics = dir.path().join("metrics.csv");
    let status = mtlseg()
        .arg("eval")
        .arg(&ckpt)
        .arg(&data)
        .args(["--split", "all"])
        .arg("--out")
        .arg(&metrics)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("id,dice,iou"));

    let pred = dir.path().join("pred");
    let status = mtlseg()
        .arg("predict")
        .arg(&ckpt)
        .arg(data.join("img/0000.png"))
        .arg("--out")
        .arg(&pred)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(pred.join("0000_prob.png").exists());
    assert!(pred.join("0000_mask.png").exists());
    assert!(pred.join("0000_dt.dtc").exists());
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(
        exit_code(mtlseg().args(["train", "--set", "no_such_key=1"])),
        2
    );
    assert_eq!(
        exit_code(mtlseg().args(["train", "--set", "mode=single", "--set", "heads=seg_and_dt"])),
        2
    );
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("nothing-here");
    assert_eq!(
        exit_code(
            mtlseg()
                .arg("train")
                .arg("--set")
                .arg(format!("data_root={}", empty.display()))
                .arg("--out")
                .arg(dir.path().join("out"))
        ),
        3
    );
    // eval against a checkpoint path that is not a checkpoint
    let not_ckpt = dir.path().join("junk.ckpt");
    std::fs::write(&not_ckpt, b"not a checkpoint at all").unwrap();
    assert_eq!(
        exit_code(
            mtlseg()
                .arg("eval")
                .arg(&not_ckpt)
                .arg(Path::new("/nonexistent"))
        ),
        3
    );
}
