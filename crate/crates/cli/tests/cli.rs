use std::path::Path;
use std::process::{Command, Output};

fn spcrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spcrf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
[data]
train_manifest = "data/manifest.tsv"
test_manifest = "data/manifest.tsv"
[superpixels]
regions = 16
compactness = 30.0
[model]
widths = [4, 8, 8]
pairwise_width = 4
[train]
epochs = 5
"#;

fn small_run(dir: &Path) {
    std::fs::write(dir.join("run.toml"), SMALL).unwrap();
    let o = spcrf(dir, &["generate", "--count", "4", "--size", "32", "--dir", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_input_names_the_path_and_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let o = spcrf(d.path(), &["oversegment", "nowhere.ppm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.ppm"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(spcrf(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(spcrf(d.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn too_many_superpixels_exits_2() {
    let d = tempfile::tempdir().unwrap();
    small_run(d.path());
    let o = spcrf(d.path(), &["oversegment", "data/face_0000.ppm", "--regions", "5000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("face_0000.ppm"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_named() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "[crf]\nlambada = 2.0\n").unwrap();
    let o = spcrf(d.path(), &["--config", "bad.toml", "gradcheck"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambada"), "{}", stderr(&o));
}

#[test]
fn oversegment_writes_map_and_overlay() {
    let d = tempfile::tempdir().unwrap();
    small_run(d.path());
    let o = spcrf(d.path(), &["oversegment", "data/face_0001.ppm", "--regions", "20", "--out", "sp/f1.spx"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.path().join("sp/f1.spx").is_file());
    assert!(d.path().join("sp/f1_overlay.ppm").is_file());
    assert!(stdout(&o).contains("regions="));
    assert!(d.path().join("out/oversegment.config.toml").is_file());
}

#[test]
fn train_eval_infer_round_trip() {
    let d = tempfile::tempdir().unwrap();
    small_run(d.path());
    let o = spcrf(d.path(), &["--config", "run.toml", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = d.path().join("out");
    let ckpts = std::fs::read_dir(out.join("checkpoints")).unwrap().count();
    assert_eq!(ckpts, 5);
    let log = std::fs::read_to_string(out.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(log.lines().all(|l| l.starts_with("epoch=") && l.contains("loss=")));
    let echoed = std::fs::read_to_string(out.join("train.config.toml")).unwrap();
    assert!(echoed.contains("regions = 16"));

    // same seed, same log
    let o = spcrf(d.path(), &["--config", "run.toml", "--out-dir", "again", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(d.path().join("again/metrics.log")).unwrap(), log);
    assert_eq!(
        std::fs::read(out.join("final.ckpt")).unwrap(),
        std::fs::read(d.path().join("again/final.ckpt")).unwrap()
    );

    let o = spcrf(d.path(), &["--config", "run.toml", "eval", "--checkpoint", "out/final.ckpt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = spcrf::evalio::EvalReport::parse(&std::fs::read_to_string(out.join("report.txt")).unwrap()).unwrap();
    assert_eq!(report.classes(), 3);
    assert!((0.0..=1.0).contains(&report.overall_accuracy));
    assert!(stdout(&o).contains("F-skin"));

    let o = spcrf(
        d.path(),
        &["--config", "run.toml", "eval", "--checkpoint", "out/final.ckpt", "--min-accuracy", "1.01"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("overall_accuracy"));

    let o = spcrf(
        d.path(),
        &["--config", "run.toml", "infer", "--checkpoint", "out/final.ckpt", "data/face_0002.ppm"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let labels = spcrf::evalio::load_labels(&out.join("face_0002_labels.pgm")).unwrap();
    let img = spcrf::evalio::load_image(&d.path().join("data/face_0002.ppm")).unwrap();
    assert_eq!((labels.height(), labels.width()), (img.height(), img.width()));
    assert!(labels.max_class() <= 2);
    assert!(out.join("face_0002_labels_overlay.ppm").is_file());
}

#[test]
fn checkpoint_of_another_architecture_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    small_run(d.path());
    let mut cfg = SMALL.replace("epochs = 5", "epochs = 1");
    std::fs::write(d.path().join("one.toml"), &cfg).unwrap();
    assert!(spcrf(d.path(), &["--config", "one.toml", "train"]).status.success());
    cfg = cfg.replace("widths = [4, 8, 8]", "widths = [4, 8, 16]");
    std::fs::write(d.path().join("other.toml"), &cfg).unwrap();
    let o = spcrf(
        d.path(),
        &["--config", "other.toml", "infer", "--checkpoint", "out/final.ckpt", "data/face_0000.ppm"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not match architecture"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let d = tempfile::tempdir().unwrap();
    let o = spcrf(d.path(), &["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("dL/dW_01 = -0.333333333333"));
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 16);

    let o = spcrf(d.path(), &["gradcheck", "--inject-fault", "phi-sign"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("ccrf_backward_phi") && err.contains("ccrf_backward_w"), "{err}");

    let o = spcrf(d.path(), &["gradcheck", "--inject-fault", "pair-normalization"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pool_pairwise"), "{}", stderr(&o));
}
