use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vdsr_cli::manifest::{manifest_path, sha256_hex, RunManifest};
use vdsr_cli::report::parse_csv;
use vdsr_core::format::{decode_model, encode_model};
use vdsr_core::imaging::rgb_to_luminance;
use vdsr_core::io::{read_rgb, write_rgb_png};
use vdsr_core::metrics::score_pair;
use vdsr_core::synth::{constant_image, textured_image};
use vdsr_core::train::EpochLog;
use vdsr_core::NetworkModel;

/// Final-epoch loss of the `toy_fixture` run, recorded from a first run.
const TOY_REFERENCE_LOSS: f64 = 5.5704642577158445;

fn vdsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdsr"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vdsr(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_images(dir: &Path, n: u64, h: usize, w: usize) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        write_rgb_png(
            dir.join(format!("img{i:02}.png")),
            &textured_image(h, w, 40 + i),
        )
        .unwrap();
    }
    dir.to_path_buf()
}

/// Four 32x32 images, patch 21, two per image at scale 2.
fn toy_dataset(root: &Path) -> PathBuf {
    let imgs = write_images(&root.join("imgs"), 4, 32, 32);
    let ds = root.join("toy.vdsd");
    ok(&[
        "patchify",
        "--input",
        p(&imgs),
        "--out",
        p(&ds),
        "--patch-size",
        "21",
        "--count",
        "2",
        "--scales",
        "2",
    ]);
    ds
}

fn train_toy(ds: &Path, out: &Path, extra: &[&str]) -> Vec<EpochLog> {
    let mut args = vec![
        "train",
        "--dataset",
        p(ds),
        "--out",
        p(out),
        "--depth",
        "3",
        "--filters",
        "4",
        "--epochs",
        "3",
        "--batch",
        "3",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    let log = fs::read_to_string(format!("{}.log", out.display())).unwrap();
    log.lines().map(|l| l.parse().unwrap()).collect()
}

#[test]
fn patchify_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = write_images(&dir.path().join("imgs"), 10, 50, 60);
    let (a, b) = (dir.path().join("a.vdsd"), dir.path().join("b.vdsd"));
    let stdout = ok(&[
        "patchify",
        "--input",
        p(&imgs),
        "--out",
        p(&a),
        "--patch-size",
        "21",
    ]);
    assert!(stdout.starts_with("180 pairs from 10 images"), "{stdout}");
    ok(&[
        "patchify",
        "--input",
        p(&imgs),
        "--out",
        p(&b),
        "--patch-size",
        "21",
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let m = RunManifest::load(&manifest_path(&a)).unwrap();
    assert_eq!(m.command, "patchify");
    assert_eq!(m.inputs.len(), 10);
    assert_eq!(m.config["scales"], "2,3,4");
    assert_eq!(m.outputs[0].sha256, sha256_hex(&fs::read(&a).unwrap()));
}

#[test]
fn patchify_rejects_empty_and_skips_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = vdsr(&[
        "patchify",
        "--input",
        p(&empty),
        "--out",
        p(&dir.path().join("x.vdsd")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no input images"));

    let mixed = write_images(&dir.path().join("mixed"), 2, 30, 30);
    fs::write(mixed.join("notes.txt"), "not an image").unwrap();
    write_rgb_png(mixed.join("tiny.png"), &textured_image(10, 10, 1)).unwrap();
    let out = vdsr(&[
        "patchify",
        "--input",
        p(&mixed),
        "--out",
        p(&dir.path().join("m.vdsd")),
        "--patch-size",
        "21",
        "--scales",
        "2",
    ]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("notes.txt") && stderr.contains("tiny.png"),
        "{stderr}"
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("12 pairs from 2 images (2 skipped)"));

    fs::remove_file(mixed.join("img00.png")).unwrap();
    fs::remove_file(mixed.join("img01.png")).unwrap();
    let out = vdsr(&[
        "patchify",
        "--input",
        p(&mixed),
        "--out",
        p(&dir.path().join("n.vdsd")),
        "--patch-size",
        "21",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn toy_fixture_matches_reference_loss() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let a = train_toy(
        &ds,
        &dir.path().join("a.vdsr"),
        &["--estimator", "var-norm"],
    );
    let b = train_toy(
        &ds,
        &dir.path().join("b.vdsr"),
        &["--estimator", "var-norm"],
    );
    let final_loss = a.last().unwrap().loss;
    assert_eq!(final_loss, b.last().unwrap().loss);
    assert_eq!(
        fs::read(dir.path().join("a.vdsr")).unwrap(),
        fs::read(dir.path().join("b.vdsr")).unwrap()
    );
    assert!(
        (final_loss - TOY_REFERENCE_LOSS).abs() <= 1e-9,
        "final loss {final_loss:?} vs reference {TOY_REFERENCE_LOSS:?}"
    );
}

#[test]
fn train_writes_metadata_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let model_path = dir.path().join("m.vdsr");
    let logs = train_toy(&ds, &model_path, &["--estimator", "var-norm", "--r", "0.5"]);
    assert_eq!(logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), [1, 2, 3]);

    let model = decode_model(&fs::read(&model_path).unwrap()).unwrap();
    assert_eq!((model.depth(), model.filters()), (3, 4));
    assert_eq!(model.metadata.estimator.unwrap().stability_r(), Some(0.5));
    assert_eq!(model.metadata.run, "fresh seed=5");

    let m = RunManifest::load(&manifest_path(&model_path)).unwrap();
    assert_eq!(m.seed, Some(5));
    assert_eq!(m.config["estimator"], "var-norm");
    assert_eq!(m.config["clip-theta"], format!("{:?}", 0.01 / 0.1));
    assert_eq!(m.config["scales"], "2");
    assert_eq!(m.outputs.len(), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# toy\nestimator=var-norm\nepochs=1\nlr=0.05\n").unwrap();
    let out = dir.path().join("c.vdsr");
    let logs = train_toy(&ds, &out, &["--config", p(&cfg), "--lr", "0.02"]);
    // The helper passes --epochs 3, which wins over the file.
    assert_eq!(logs.len(), 3);
    let m = RunManifest::load(&manifest_path(&out)).unwrap();
    assert_eq!(m.config["lr"], "0.02");
    assert_eq!(m.config["estimator"], "var-norm");
    assert_eq!(m.inputs.len(), 2);
}

#[test]
fn zero_learning_rate_returns_init_model() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let first = dir.path().join("first.vdsr");
    let again = dir.path().join("again.vdsr");
    train_toy(&ds, &first, &[]);
    train_toy(&ds, &again, &["--init", p(&first), "--lr", "0"]);
    assert_eq!(
        sha256_hex(&fs::read(&first).unwrap()),
        sha256_hex(&fs::read(&again).unwrap())
    );
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let out = vdsr(&[
        "train",
        "--dataset",
        p(&ds),
        "--out",
        p(&dir.path().join("d.vdsr")),
        "--depth",
        "3",
        "--filters",
        "4",
        "--lr",
        "1e150",
        "--clip-theta",
        "1e300",
        "--epochs",
        "3",
        "--batch",
        "2",
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 1"));
    assert!(!dir.path().join("d.vdsr").exists());
}

#[test]
fn predict_zero_model_and_constant_input() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("zero.vdsr");
    fs::write(&model, encode_model(&NetworkModel::zeros(3, 4, 3).unwrap())).unwrap();
    let scene = dir.path().join("scene.png");
    write_rgb_png(&scene, &textured_image(227, 227, 9)).unwrap();
    let out = dir.path().join("pred");
    ok(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&scene),
        "--scale",
        "4",
        "--out",
        p(&out),
    ]);
    let sr = read_rgb(out.join("scene_sr.png")).unwrap();
    assert_eq!(sr.dims(), (227, 227));
    assert_eq!(
        fs::read(out.join("scene_sr.png")).unwrap(),
        fs::read(out.join("scene_bicubic.png")).unwrap()
    );

    let flat = dir.path().join("flat.png");
    write_rgb_png(&flat, &constant_image(30, 30, [0.3, 0.5, 0.7])).unwrap();
    ok(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&flat),
        "--scale",
        "2",
        "--out",
        p(&out),
    ]);
    let residual = read_rgb(out.join("flat_residual.png")).unwrap();
    assert!(residual
        .r
        .as_slice()
        .iter()
        .all(|&v| (v * 255.0).round() == 128.0));
    let m = RunManifest::load(&manifest_path(&out.join("flat_sr.png"))).unwrap();
    assert_eq!(m.config["residual-max-abs"], "0.0");
    assert_eq!(m.outputs.len(), 3);
}

#[test]
fn predict_warns_on_scale_outside_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let model = dir.path().join("m.vdsr");
    train_toy(&ds, &model, &[]);
    let scene = dir.path().join("s.png");
    write_rgb_png(&scene, &textured_image(40, 40, 3)).unwrap();
    let out = vdsr(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&scene),
        "--scale",
        "3",
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(
        vdsr(&[
            "predict",
            "--model",
            p(&model),
            "--input",
            p(&scene),
            "--scale",
            "5",
            "--out",
            "o"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn evaluate_table_matches_saved_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let model = dir.path().join("m.vdsr");
    train_toy(&ds, &model, &[]);
    let scenes = write_images(&dir.path().join("scenes"), 2, 36, 40);
    fs::write(scenes.join("broken.png"), b"garbage").unwrap();
    let table = dir.path().join("table.tsv");
    let spec_a = format!("a={}", model.display());
    let spec_b = format!("b={}", model.display());
    ok(&[
        "evaluate",
        "--model",
        &spec_a,
        "--model",
        &spec_b,
        "--scenes",
        p(&scenes),
        "--scale",
        "2",
        "--out",
        p(&table),
    ]);

    let text = fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("scene\tbicubic\ta\tb\n"));
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split('\t').collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[2], cells[3]);
    }
    assert_eq!(text.lines().count(), 3);

    let rows = parse_csv(&fs::read_to_string(dir.path().join("table.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    let out = dir.path().join("pred");
    ok(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&scenes.join("img00.png")),
        "--scale",
        "2",
        "--out",
        p(&out),
    ]);
    let original = rgb_to_luminance(&read_rgb(scenes.join("img00.png")).unwrap());
    for (file, method) in [("img00_sr.png", "a"), ("img00_bicubic.png", "bicubic")] {
        let direct = score_pair(
            &original,
            &rgb_to_luminance(&read_rgb(out.join(file)).unwrap()),
        )
        .unwrap();
        let row = rows
            .iter()
            .find(|r| r.scene == "img00.png" && r.method == method)
            .unwrap();
        assert_eq!(row.score, direct, "{method}");
    }
}

#[test]
fn evaluate_fails_when_no_scene_works() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("zero.vdsr");
    fs::write(&model, encode_model(&NetworkModel::zeros(2, 2, 3).unwrap())).unwrap();
    let bad = dir.path().join("bad.png");
    fs::write(&bad, b"nope").unwrap();
    let spec = format!("z={}", model.display());
    let out = vdsr(&[
        "evaluate",
        "--model",
        &spec,
        "--scenes",
        p(&bad),
        "--scale",
        "2",
        "--out",
        p(&dir.path().join("t.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let spec = format!("bicubic={}", model.display());
    let out = vdsr(&[
        "evaluate",
        "--model",
        &spec,
        "--scenes",
        p(&bad),
        "--scale",
        "2",
        "--out",
        "t.tsv",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_files_are_io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = vdsr(&[
        "predict",
        "--model",
        p(&dir.path().join("none.vdsr")),
        "--input",
        "x.png",
        "--scale",
        "2",
        "--out",
        "o",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let out = vdsr(&[
        "train",
        "--dataset",
        p(&dir.path().join("none.vdsd")),
        "--out",
        "m",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn replay_reproduces_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset(dir.path());
    let model = dir.path().join("m.vdsr");
    train_toy(&ds, &model, &["--estimator", "mse"]);
    let first = fs::read(&model).unwrap();
    fs::remove_file(&model).unwrap();
    ok(&["replay", p(&manifest_path(&model))]);
    assert_eq!(fs::read(&model).unwrap(), first);
}
