use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lacvit_core::data::{encode_cifar, load_cifar_binary, CifarLayout, Split};

const TINY: &[&str] = &[
    "--set",
    "synthetic.train_per_class=6",
    "--set",
    "synthetic.validation_per_class=3",
    "--set",
    "model.depth=1",
    "--set",
    "model.embed_dim=16",
    "--set",
    "model.heads=2",
    "--set",
    "model.patch_size=8",
    "--set",
    "projection.hidden=16",
    "--set",
    "projection.dim=8",
    "--set",
    "stage1.epochs=2",
    "--set",
    "stage1.batch_size=8",
    "--set",
    "stage2.epochs=3",
    "--set",
    "stage2.batch_size=8",
    "--set",
    "ce.epochs=2",
    "--set",
    "ce.batch_size=8",
];

/// Runs the binary with the subcommand words of `args`, then the tiny model
/// settings, then the remaining flags of `args` so that they take precedence.
fn lacvit(dir: &Path, args: &[&str]) -> Output {
    let split = args.iter().position(|a| a.starts_with("--")).unwrap_or(args.len());
    Command::new(env!("CARGO_BIN_EXE_lacvit"))
        .args(&args[..split])
        .args(TINY)
        .args(&args[split..])
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .env_remove("LACVIT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one json document")
}

fn stage1(dir: &Path) -> PathBuf {
    ok(lacvit(dir, &["train", "--stage", "contrastive"]));
    dir.join("contrastive.ckpt")
}

#[test]
fn synth_data_round_trips_and_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    ok(lacvit(&a, &["synth-data"]));
    ok(lacvit(&b, &["synth-data"]));
    ok(lacvit(&c, &["synth-data", "--seed", "9"]));

    let layout = CifarLayout::CIFAR10;
    for (split, per_class) in [(Split::Train, 6), (Split::Validation, 3)] {
        let name = format!("{}.bin", split.as_str());
        let bytes = fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes.len(), 4 * per_class * layout.record_size());
        let loaded = load_cifar_binary(&a.join(&name), 4, layout, split).unwrap();
        assert_eq!(encode_cifar(&loaded, layout).unwrap(), bytes);
        assert_eq!(fs::read(b.join(&name)).unwrap(), bytes);
        assert_ne!(fs::read(c.join(&name)).unwrap(), bytes);
    }
    assert!(a.join("synth_config.txt").exists());
}

#[test]
fn head_stage_needs_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lacvit(tmp.path(), &["train", "--stage", "head"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--from-checkpoint"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lacvit(tmp.path(), &["synth-data", "--set", "stage1.epoch=3"]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\nloss.kind = supcon\nloss.tua = 0.1\n").unwrap();
    let out = lacvit(tmp.path(), &["synth-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn two_stage_run_writes_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let ckpt = stage1(dir);
    let out = ok(lacvit(
        dir,
        &["train", "--stage", "head", "--from-checkpoint", ckpt.to_str().unwrap()],
    ));
    let summary = json(&out);
    assert_eq!(summary["stage"], "head");
    assert_eq!(summary["steps"], 3 * 3);

    let csv = fs::read_to_string(dir.join("head_metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.contains(",train,")).count(), 3);
    assert_eq!(rows.iter().filter(|r| r.contains(",validation,")).count(), 3);
    let s1 = fs::read_to_string(dir.join("contrastive_metrics.csv")).unwrap();
    assert_eq!(s1.lines().count(), 1 + 2);

    let echoed = fs::read_to_string(dir.join("head_config.txt")).unwrap();
    assert!(echoed.contains("stage2.epochs = 3"));
    assert!(echoed.contains("model.depth = 1"));

    let head = dir.join("head.ckpt");
    let first = ok(lacvit(dir, &["eval", "--checkpoint", head.to_str().unwrap()]));
    let second = ok(lacvit(dir, &["eval", "--checkpoint", head.to_str().unwrap()]));
    assert_eq!(first.stdout, second.stdout);
    let report = json(&first);
    assert_eq!(report["n"], 12);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(dir.join("eval_validation.json").exists());
}

#[test]
fn reports_carry_source_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let ckpt = stage1(dir);
    let expected = json(&ok(lacvit(dir, &["synth-data"])))["config_hash"].clone();
    let c = ckpt.to_str().unwrap();

    let iso = json(&ok(lacvit(
        dir,
        &["analyze", "isotropy", "--checkpoint", c, "--representation", "z"],
    )));
    assert_eq!(iso["config_hash"], expected);
    assert_eq!(iso["representation"], "z");
    let score = iso["score"].as_f64().unwrap();
    assert!(score > 0.0 && score <= 1.0);

    let cos = json(&ok(lacvit(
        dir,
        &["analyze", "cosine", "--checkpoint", c, "--classes", "0,1"],
    )));
    assert_eq!(cos["config_hash"], expected);
    let hist = fs::read_to_string(dir.join("cosine_h_validation.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_lo,bin_hi,positive,negative"));

    let proj = json(&ok(lacvit(
        dir,
        &["analyze", "project", "--checkpoint", c, "--split", "train"],
    )));
    assert_eq!(proj["config_hash"], expected);
    let coords = fs::read_to_string(dir.join("projection_h_train.csv")).unwrap();
    assert_eq!(coords.lines().count(), 1 + 24);

    // the input checkpoint is never rewritten
    let before = fs::read(&ckpt).unwrap();
    ok(lacvit(dir, &["analyze", "isotropy", "--checkpoint", c]));
    assert_eq!(fs::read(&ckpt).unwrap(), before);
}

#[test]
fn single_threaded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let w = tmp.path().join("w");
    let sa = json(&ok(lacvit(&a, &["train", "--stage", "ce"])));
    let sb = json(&ok(lacvit(&b, &["train", "--stage", "ce"])));
    let sw = json(&ok(lacvit(&w, &["train", "--stage", "ce", "--workers", "4"])));
    for f in ["ce.ckpt", "ce_metrics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(sa["view_digest"], sb["view_digest"]);
    assert_eq!(sa["view_digest"], sw["view_digest"]);
}

#[test]
fn lacvit_threads_caps_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lacvit"))
        .args(["synth-data", "--workers", "8"])
        .args(TINY)
        .arg("--out-dir")
        .arg(tmp.path())
        .env("LACVIT_THREADS", "2")
        .output()
        .unwrap();
    ok(out);
    let echoed = fs::read_to_string(tmp.path().join("synth_config.txt")).unwrap();
    assert!(echoed.contains("run.workers = 2"));
}

#[test]
fn input_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = lacvit(dir, &["eval", "--checkpoint", "does-not-exist.ckpt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.ckpt"));

    let ckpt = stage1(dir);
    let bytes = fs::read(&ckpt).unwrap();
    let cut = dir.join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = lacvit(dir, &["analyze", "isotropy", "--checkpoint", cut.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    // a stage-1 checkpoint has no task head
    let out = lacvit(dir, &["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(!out.status.success());

    let garbage = dir.join("train.bin");
    fs::write(&garbage, [0u8; 100]).unwrap();
    let out = lacvit(
        dir,
        &[
            "train",
            "--stage",
            "ce",
            "--set",
            &format!("data.train={}", garbage.display()),
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn resumed_stage_one_matches_uninterrupted_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    let s_full = json(&ok(lacvit(
        &full,
        &["train", "--stage", "contrastive", "--set", "stage1.momentum=0"],
    )));
    ok(lacvit(
        &part,
        &[
            "train",
            "--stage",
            "contrastive",
            "--set",
            "stage1.momentum=0",
            "--set",
            "stage1.epochs=1",
        ],
    ));
    let resumed = json(&ok(lacvit(
        &part,
        &[
            "train",
            "--stage",
            "contrastive",
            "--set",
            "stage1.momentum=0",
            "--from-checkpoint",
            part.join("contrastive.ckpt").to_str().unwrap(),
        ],
    )));
    assert_eq!(resumed["steps"], s_full["steps"].as_u64().unwrap() / 2);
    let a = fs::read_to_string(full.join("contrastive_metrics.csv")).unwrap();
    let b = fs::read_to_string(part.join("contrastive_metrics.csv")).unwrap();
    // checkpoints hold f32 weights, so the resumed epoch agrees up to that rounding
    let loss = |line: &str| line.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    let (ra, rb) = (a.lines().nth(2).unwrap(), b.lines().nth(1).unwrap());
    assert!(rb.starts_with("2,train,"));
    assert!((loss(ra) - loss(rb)).abs() < 1e-6 * loss(ra));
}
