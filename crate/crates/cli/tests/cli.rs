use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn msrnv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msrnv")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = msrnv(args);
    assert!(out.status.success(), "msrnv {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SUBCOMMANDS: [&str; 7] = ["make-dataset", "extract-features", "train", "synth", "resample", "bench-rtf", "evaluate"];

#[test]
fn help_and_usage_errors() {
    assert_eq!(msrnv(&["--help"]).status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let out = msrnv(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(msrnv(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(msrnv(&["transmogrify"]).status.code(), Some(2));
    assert_eq!(msrnv(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = msrnv(&["make-dataset", "--out-dir", p(dir.path()), "--f0-max", "600"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("600"));
    let out = msrnv(&["bench-rtf", "--preset", "desk", "--features-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c.json");
    fs::write(&c, r#"{"total_steps": 500, "batch_size": 3, "generator": {"layers": 4}}"#).unwrap();
    let text = ok(&["train", "--preset", "desk", "--config", p(&c), "--steps", "10", "--print-config"]);
    let cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg["total_steps"], 10);
    assert_eq!(cfg["batch_size"], 3);
    assert_eq!(cfg["generator"]["layers"], 4);
    assert_eq!(cfg["generator"]["residual_channels"], 16);

    fs::write(&c, r#"{"total_steps": 500, "no_such_field": 1}"#).unwrap();
    assert_eq!(msrnv(&["train", "--preset", "desk", "--config", p(&c), "--print-config"]).status.code(), Some(1));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    ok(&["make-dataset", "--out-dir", p(&data), "--utterances", "3", "--heldout", "1", "--seconds", "0.5", "--seed", "4"]);
    let (train, heldout) = (data.join("train.tsv"), data.join("heldout.tsv"));

    let trained = root.join("trained");
    let untrained = root.join("untrained");
    let common = ["train", "--preset", "desk", "--seed", "1", "--manifest", p(&train), "--heldout", p(&heldout)];
    ok(&[&common[..], &["--out-dir", p(&trained), "--steps", "60"]].concat());
    ok(&[&common[..], &["--out-dir", p(&untrained), "--steps", "0"]].concat());
    let telemetry = fs::read_to_string(trained.join("telemetry.csv")).unwrap();
    assert_eq!(telemetry.lines().next().unwrap(), "step,lr,stage,loss_aux,loss_adv,loss_dis");

    // Training lowers the distance to the held-out references at every rate.
    let score = |run: &Path| -> Vec<f64> {
        let csv = root.join(format!("{}.csv", run.file_name().unwrap().to_string_lossy()));
        ok(&["evaluate", "--checkpoint", p(&run.join("checkpoint.ckpt")), "--manifest", p(&heldout), "--out", p(&csv)]);
        let text = fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "id,rate,lsd_db,mr_stft,band_gap,residual_above,cropped");
        lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect()
    };
    let (after, before) = (score(&trained), score(&untrained));
    assert_eq!(after.len(), 4);
    assert!(after.iter().zip(&before).all(|(a, b)| a < b), "{after:?} vs {before:?}");
    assert_eq!(score(&trained), after);

    let feat = data.join("feats").join("heldout000.feat");
    let synth = root.join("synth");
    ok(&["synth", "--features", p(&feat), "--checkpoint", p(&trained.join("checkpoint.ckpt")), "--out-dir", p(&synth), "--dump-all-rates"]);
    for rate in [1000, 2000, 4000, 8000] {
        assert!(synth.join(format!("heldout000.{rate}.wav")).exists());
    }
    let bands = fs::read_to_string(synth.join("heldout000.bands.csv")).unwrap();
    assert_eq!(bands.lines().next().unwrap(), "stage,rate,band_lo_hz,band_hi_hz,fraction");
    assert_eq!(bands.lines().count(), 1 + 1 + 2 + 3 + 4);

    let low = root.join("low.wav");
    ok(&["resample", "--in", p(&data.join("wav").join("utt000.wav")), "--out", p(&low), "--rate", "2000"]);
    let feats = root.join("feats");
    ok(&["extract-features", "--in", p(&low), "--out-dir", p(&feats), "--preset", "desk", "--stats-out", p(&root.join("s.json"))]);
    assert!(feats.join("low.feat").exists());

    let report = root.join("rtf.csv");
    let summary = ok(&[
        "bench-rtf", "--checkpoint", p(&trained.join("checkpoint.ckpt")), "--features-dir", p(&data.join("feats")), "--n-utts", "2",
        "--warmup", "0", "--repeats", "1", "--out", p(&report),
    ]);
    assert!(summary.contains("mean RTF"));
    assert_eq!(fs::read_to_string(report).unwrap().lines().count(), 3);
}
