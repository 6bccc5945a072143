//! End-to-end tests of the `spic` binary: every verb through real files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = spic(args);
    assert!(
        out.status.success(),
        "spic {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn make_corpus(dir: &Path, count: usize) {
    run_ok(&[
        "make-synthetic",
        "--out",
        dir.to_str().unwrap(),
        "--count",
        &count.to_string(),
        "--height",
        "16",
        "--width",
        "32",
        "--seed",
        "7",
    ]);
}

/// Micro model + schedule: small enough that `train` finishes in seconds.
fn write_micro_config(path: &Path, extra: &str) {
    fs::write(
        path,
        format!(
            r#"
[model]
base_channels = 4
channel_mult = [1, 2]
res_blocks = 1
attend_lowest = false
n_classes = 4
spade_hidden = 4

[train]
steps = 3
batch_size = 1
lr = 0.001
seed = 0

[train.schedule]
t_max = 25
beta_start = 0.0001
beta_end = 0.02
{extra}"#
        ),
    )
    .unwrap();
}

fn train_micro(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    make_corpus(&data, 2);
    let cfg = dir.join("cfg.toml");
    write_micro_config(&cfg, "");
    let ckpt = dir.join("ck.bin");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--log-every",
        "0",
    ]);
    ckpt
}

#[test]
fn encode_reports_rates_that_satisfy_the_sum_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_corpus(&data, 1);
    let out = tmp.path().join("x.spic");
    let stdout = run_ok(&[
        "encode",
        "--image",
        data.join("images/synthetic_0000.png").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quality",
        "20",
    ]);
    assert!(out.is_file());
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let f = |k: &str| report[k].as_f64().unwrap();
    assert!(
        (f("bpp_total") - f("bpp_ssm") - f("bpp_coarse") - f("bpp_header")).abs() < 1e-12
    );
    let n = |k: &str| report[k].as_u64().unwrap();
    assert_eq!(
        fs::metadata(&out).unwrap().len(),
        n("ssm_bytes") + n("coarse_bytes") + n("header_bytes")
    );
}

#[test]
fn encoded_bitstream_matches_the_frozen_golden_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_corpus(&data, 1);
    let image = data.join("images/synthetic_0000.png");
    let mut produced = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("g{run}.spic"));
        run_ok(&[
            "encode",
            "--image",
            image.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--quality",
            "20",
        ]);
        produced.push(fs::read(&out).unwrap());
    }
    assert_eq!(produced[0], produced[1], "encoding must be deterministic");
    let golden = include_bytes!("golden/tiny.spic");
    assert_eq!(
        produced[0],
        golden.as_slice(),
        "bitstream differs from the frozen golden file; bump the format \
         version if the change is intentional"
    );
}

#[test]
fn decode_round_trip_writes_image_and_exact_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_micro(tmp.path());
    let image = tmp.path().join("data/images/synthetic_0000.png");
    let spic_path = tmp.path().join("x.spic");
    run_ok(&[
        "encode",
        "--image",
        image.to_str().unwrap(),
        "--out",
        spic_path.to_str().unwrap(),
    ]);
    let recon = tmp.path().join("recon.png");
    let labels = tmp.path().join("labels.png");
    run_ok(&[
        "decode",
        "--input",
        spic_path.to_str().unwrap(),
        "--out",
        recon.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--labels-out",
        labels.to_str().unwrap(),
        "--steps",
        "2",
    ]);
    assert!(fs::metadata(&recon).unwrap().len() > 0);
    // The SSM path is lossless end to end: decoded labels equal the
    // originals byte for byte (same writer, same content).
    let original = tmp.path().join("data/labels/synthetic_0000.png");
    assert_eq!(fs::read(&labels).unwrap(), fs::read(&original).unwrap());
}

#[test]
fn decode_of_a_truncated_file_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.spic");
    fs::write(&bad, b"SPIC\x01trunc").unwrap();
    let out = spic(&[
        "decode",
        "--input",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("r.png").to_str().unwrap(),
        "--checkpoint",
        tmp.path().join("missing.ckpt").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error"), "stderr: {err}");
    assert!(!tmp.path().join("r.png").exists());
}

#[test]
fn sweep_then_plot_produces_csv_and_svgs() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = train_micro(tmp.path());
    let cfg = tmp.path().join("sweep.toml");
    write_micro_config(
        &cfg,
        &format!(
            r#"
[sweep]
qualities = [12]
ssm_codec = "reference"
coarse_codec = "reference"
out_dir = "{}"
seed = 3

[sweep.sampler]
steps = 2
seed = 0
"#,
            tmp.path().join("out").display()
        ),
    );
    let stdout = run_ok(&[
        "sweep",
        "--data",
        tmp.path().join("data").to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    // 2 images x (ours + dct baseline) at one quality.
    assert_eq!(summary["rows"], 4);
    assert_eq!(summary["failures"], 0);
    let csv = tmp.path().join("out/sweep.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5, "header + 4 rows");
    assert!(text.starts_with("method,quality,image_id,"));

    run_ok(&[
        "plot",
        "--csv",
        csv.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("plots").to_str().unwrap(),
    ]);
    for name in ["miou_vs_bpp.svg", "fid_vs_bpp.svg"] {
        let p = tmp.path().join("plots").join(name);
        assert!(fs::metadata(&p).unwrap().len() > 0, "{name}");
    }
}

#[test]
fn sweep_on_an_empty_dataset_fails_with_a_notice() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir_all(tmp.path().join("empty/images")).unwrap();
    let out = spic(&[
        "sweep",
        "--data",
        tmp.path().join("empty").to_str().unwrap(),
        "--checkpoint",
        tmp.path().join("missing.ckpt").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no usable images"), "stderr: {err}");
}

#[test]
fn train_rejects_a_model_class_count_that_contradicts_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    make_corpus(&data, 1);
    let cfg = tmp.path().join("cfg.toml");
    write_micro_config(&cfg, "");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, text.replace("n_classes = 4", "n_classes = 7")).unwrap();
    let out = spic(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("ck.bin").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_classes"), "stderr: {err}");
}
