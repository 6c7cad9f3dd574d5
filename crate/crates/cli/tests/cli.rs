use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_csi2video");

const SCENE: &str = "duration_s = 4\nimage_width = 48\nimage_height = 24\nseed = 5\n";
const PREPROCESS: &str = "input_h = 8\ninput_w = 16\n";
const TRAINING: &str = "\
mapper_channels = 3,4,4
mapper_residual_blocks = 0
mapper_head_channels = 3
mapper_dense_hidden = 6
map_height = 8
map_width = 16
generator_channels = 3,4,4
generator_residual_blocks = 1
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn csi2video")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scene.cfg"), SCENE).unwrap();
    fs::write(dir.path().join("pre.cfg"), PREPROCESS).unwrap();
    fs::write(dir.path().join("train.cfg"), TRAINING).unwrap();
    dir
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == ext)
        })
        .count()
}

#[test]
fn synth_then_preprocess_caches_one_input_per_frame() {
    let t = setup();
    let d = t.path();
    ok(d, &["synth", "--config", "scene.cfg", "--out", "data"]);
    ok(
        d,
        &[
            "preprocess",
            "--in",
            "data",
            "--out",
            "cache",
            "--config",
            "pre.cfg",
        ],
    );
    let n_frames = count_files(&d.join("data/frames"), "png");
    // 4 s at 7.5 fps
    assert_eq!(n_frames, 30);
    let index = fs::read_to_string(d.join("cache/index.txt")).unwrap();
    assert_eq!(
        index.lines().count(),
        count_files(&d.join("cache/inputs"), "bin")
    );
    assert!(index.lines().count() > 0 && index.lines().count() <= n_frames);
    assert!(d.join("data/manifest.json").is_file());
    assert!(!d.join("data/.csi2video.lock").exists());
}

#[test]
fn train_mapper_logs_one_line_per_epoch() {
    let t = setup();
    let d = t.path();
    ok(d, &["synth", "--config", "scene.cfg", "--out", "data"]);
    ok(
        d,
        &[
            "preprocess",
            "--in",
            "data",
            "--out",
            "cache",
            "--config",
            "pre.cfg",
        ],
    );
    ok(
        d,
        &[
            "train-mapper",
            "--data",
            "cache",
            "--out",
            "m",
            "--config",
            "train.cfg",
            "--epochs",
            "20",
        ],
    );
    let log = fs::read_to_string(d.join("m/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
    for (i, line) in log.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"], i);
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }
    assert!(d.join("m/mapper.ckpt").is_file());
    assert!(d.join("m/training.cfg").is_file());
}

#[test]
fn full_pipeline_produces_predictions_report_and_renders() {
    let t = setup();
    let d = t.path();
    ok(d, &["synth", "--config", "scene.cfg", "--out", "data"]);
    ok(
        d,
        &[
            "preprocess",
            "--in",
            "data",
            "--out",
            "cache",
            "--config",
            "pre.cfg",
        ],
    );
    ok(
        d,
        &[
            "train-mapper",
            "--data",
            "cache",
            "--out",
            "m",
            "--config",
            "train.cfg",
            "--epochs",
            "1",
        ],
    );
    ok(
        d,
        &[
            "train-generator",
            "--data",
            "data",
            "--out",
            "g",
            "--config",
            "train.cfg",
            "--epochs",
            "1",
        ],
    );
    ok(
        d,
        &[
            "infer",
            "--cache",
            "cache",
            "--mapper",
            "m",
            "--generator",
            "g",
            "--data",
            "data",
            "--out",
            "pred",
            "--split",
            "test",
            "--max-persons",
            "1",
        ],
    );
    let n_cached = fs::read_to_string(d.join("cache/index.txt"))
        .unwrap()
        .lines()
        .count();
    let n_test = n_cached - (n_cached as f64 * 0.75).floor() as usize;
    assert_eq!(count_files(&d.join("pred/frames"), "png"), n_test);
    assert_eq!(count_files(&d.join("pred/masks"), "png"), n_test);
    assert_eq!(count_files(&d.join("pred/maps"), "jhm"), n_test);
    let stdout = ok(
        d,
        &[
            "eval",
            "--data",
            "data",
            "--pred",
            "pred",
            "--out",
            "report.json",
        ],
    );
    assert!(stdout.starts_with("eval: PCK@0.2 "));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["iou"]["per_frame"].as_array().unwrap().len(), n_test);
    ok(d, &["render", "--pred", "pred", "--out", "vis"]);
    assert_eq!(count_files(&d.join("vis"), "png"), n_test);
}

#[test]
fn unknown_flag_exits_1_with_usage() {
    let t = setup();
    let out = run(t.path(), &["synth", "--out", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage:"), "{err}");
    assert!(!t.path().join("x").exists());
}

#[test]
fn missing_input_is_a_data_error_on_one_line() {
    let t = setup();
    let out = run(t.path(), &["preprocess", "--in", "nope", "--out", "cache"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("csi2video: error[data]: "), "{err}");
}

#[test]
fn invalid_config_value_is_a_data_error() {
    let t = setup();
    let out = run(
        t.path(),
        &["synth", "--out", "data", "--set", "n_persons=9"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_override_is_a_usage_error() {
    let t = setup();
    let out = run(t.path(), &["synth", "--out", "data", "--set", "n_persons"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverging_training_exits_3() {
    let t = setup();
    let d = t.path();
    ok(d, &["synth", "--config", "scene.cfg", "--out", "data"]);
    ok(
        d,
        &[
            "preprocess",
            "--in",
            "data",
            "--out",
            "cache",
            "--config",
            "pre.cfg",
        ],
    );
    let out = run(
        d,
        &[
            "train-mapper",
            "--data",
            "cache",
            "--out",
            "m",
            "--config",
            "train.cfg",
            "--epochs",
            "3",
            "--set",
            "mapper_lr=1e300",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("csi2video: error[numeric]: "));
}

#[test]
fn locked_output_directory_is_refused() {
    let t = setup();
    let d = t.path();
    fs::create_dir(d.join("data")).unwrap();
    fs::write(d.join("data/.csi2video.lock"), "").unwrap();
    let out = run(d, &["synth", "--config", "scene.cfg", "--out", "data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("data/csi.csil").exists());
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let t = setup();
    let d = t.path();
    ok(d, &["synth", "--config", "scene.cfg", "--out", "a"]);
    ok(
        d,
        &[
            "synth",
            "--config",
            "scene.cfg",
            "--out",
            "b",
            "--seed",
            "6",
        ],
    );
    ok(
        d,
        &[
            "synth",
            "--config",
            "scene.cfg",
            "--out",
            "c",
            "--seed",
            "5",
        ],
    );
    let csi = |p: &str| fs::read(d.join(p).join("csi.csil")).unwrap();
    assert_ne!(csi("a"), csi("b"));
    assert_eq!(csi("a"), csi("c"));
}
