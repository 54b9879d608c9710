use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tsr::config::RunConfig;
use tsr::pgm::read_pgm;
use tsr::run::{parse_log, LOG_FILE};

fn tsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = tsr(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small network and short crops so the smoke runs take seconds.
const SMALL: &str = "\
scale = 2
misr_channels = 4
residual_channels = 4
sisr_feat0 = 4
sisr_feat = 4
fusion_channels = 4
batch_size = 2
crop_size = 16
max_seq_len = 3
seed = 5
";

#[test]
fn complexity_with_defaults_prints_a_table() {
    let out = ok(&["complexity"]);
    assert!(out.contains("GFLOPs"), "{out}");
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("layers.csv");
    ok(&["complexity", "--scale", "2", "--height", "16", "--width", "12", "--csv", s(&csv)]);
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 10);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(tsr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tsr(&["complexity", "--bogus"]).status.code(), Some(2));
    assert_eq!(tsr(&["train"]).status.code(), Some(2), "train without data is a usage error");
    let help = String::from_utf8(tsr(&["--help"]).stdout).unwrap();
    assert!(help.contains("base_lr"));
}

#[test]
fn config_round_trips_through_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, SMALL).unwrap();
    let shown = ok(&["--config", s(&path), "--seed", "9", "show-config"]);
    let parsed = RunConfig::parse(&shown).unwrap();
    assert_eq!(parsed.train.seed, 9, "flags override the file");
    assert_eq!(parsed.network.misr_channels, 4);
    assert_eq!(RunConfig::parse(&parsed.to_text()).unwrap(), parsed);

    fs::write(&path, "scale = 2\nlearning_rate = 1\n").unwrap();
    let bad = tsr(&["--config", s(&path), "show-config"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("learning_rate"));
}

#[test]
fn synthetic_corpus_train_eval_infer() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = root.join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let (cfg, data, run, eval, infer) = (
        s(&cfg),
        root.join("data"),
        root.join("run"),
        root.join("eval"),
        root.join("infer"),
    );

    ok(&["--config", cfg, "--out", s(&data), "make-synthetic", "--sequences", "4", "--frames", "3", "--size", "24"]);
    assert_eq!(fs::read_to_string(data.join("index.txt")).unwrap().lines().count(), 4);

    let out = ok(&["--config", cfg, "--out", s(&run), "train", "--data", s(&data), "--epochs", "1"]);
    assert!(out.contains("3 train / 1 validation"), "{out}");
    let rows = parse_log(&fs::read_to_string(run.join(LOG_FILE)).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    let checkpoints: Vec<_> = fs::read_dir(&run)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "tsr"))
        .collect();
    assert_eq!(checkpoints.len(), 1);
    let ck = checkpoints[0].path();

    let table = ok(&["--checkpoint", s(&ck), "--out", s(&eval), "eval", "--data", s(&data), "--split", "all"]);
    assert!(table.contains("SR") && table.contains("Bicubic"), "{table}");
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().filter(|l| l.starts_with("SR,")).count(), 4);
    assert_eq!(metrics.lines().filter(|l| l.starts_with("Bicubic,")).count(), 4);
    for line in metrics.lines().skip(1) {
        let psnr: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(psnr.is_finite(), "{line}");
    }

    ok(&["--config", cfg, "degrade", "--data", s(&data)]);
    let lr_seq = data.join("lr_x2").join("seq_0000");
    let hr_seq = data.join("seq_0000");
    let out = ok(&[
        "--checkpoint",
        s(&ck),
        "--out",
        s(&infer),
        "infer",
        "--input",
        s(&lr_seq),
        "--hr",
        s(&hr_seq),
    ]);
    assert_eq!(out.lines().filter(|l| l.contains("PSNR")).count(), 3);
    let sr = read_pgm(&infer.join("sr").join("frame_000.pgm")).unwrap();
    assert_eq!((sr.width, sr.height), (24, 24));
    let cmp = read_pgm(&infer.join("comparison_002.pgm")).unwrap();
    assert_eq!((cmp.width, cmp.height), (72, 24));

    // a checkpoint for a different scale is refused when the scale is given
    let mismatch = tsr(&["--scale", "4", "--checkpoint", s(&ck), "--out", s(&infer), "infer", "--input", s(&lr_seq)]);
    assert_eq!(mismatch.status.code(), Some(1));

    // damaged corpus: validation failure with the sequence named
    fs::remove_file(data.join("seq_0002").join("frame_001.pgm")).unwrap();
    let bad = tsr(&["--config", cfg, "--out", s(&run), "train", "--data", s(&data), "--epochs", "1"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("seq_0002"));
}
