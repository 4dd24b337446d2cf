//! Black-box tests of the command-line surface: exit codes, manifests,
//! overwrite protection and output contracts.

mod common;

use common::*;
use nocturne_core::curve::CurveNetworkParams;
use nocturne_core::ImageTensor;
use tempfile::tempdir;

#[test]
fn missing_required_flag_exits_2_with_usage() {
    let out = nocturne()
        .args(["train-prompts", "--out", "x.ntar"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn unknown_encoder_kind_exits_2() {
    let dir = tempdir().unwrap();
    write_dataset(dir.path(), "d", 2, 32, &["car"], 1);
    let code = exit_code(nocturne().args([
        "train-prompts",
        "--data",
        dir.path().join("d_images").to_str().unwrap(),
        "--out",
        dir.path().join("p.ntar").to_str().unwrap(),
        "--steps",
        "1",
        "--crop-size",
        "32",
        "--encoder",
        "nonsense",
    ]));
    assert_eq!(code, 2);
}

#[test]
fn tiny_prompt_run_writes_reloadable_checkpoint() {
    let dir = tempdir().unwrap();
    write_dataset(dir.path(), "d", 4, 32, &["car"], 2);
    let ckpt = dir.path().join("prompts.ntar");
    run_ok(nocturne().args([
        "train-prompts",
        "--data",
        dir.path().join("d_images").to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--steps",
        "5",
        "--crop-size",
        "32",
        "--prompt-length",
        "3",
        "--embed-dim",
        "32",
    ]));
    assert!(ckpt.is_file());
    let pair = nocturne_core::prior::LearnedPromptPair::load(&ckpt).unwrap();
    assert_eq!(pair.positive.dim(), (3, 512));
    assert_eq!(pair.metadata.steps, 5);
    // loss CSV and manifest exist
    assert!(dir.path().join("prompts.ntar.loss.csv").is_file());
    assert!(dir.path().join("prompts.ntar.manifest.json").is_file());
}

#[test]
fn fixed_seed_reproduces_prompt_checkpoint_bytes() {
    let dir = tempdir().unwrap();
    write_dataset(dir.path(), "d", 4, 32, &["car"], 3);
    let run = |out: &str| {
        run_ok(nocturne().args([
            "train-prompts",
            "--data",
            dir.path().join("d_images").to_str().unwrap(),
            "--out",
            dir.path().join(out).to_str().unwrap(),
            "--steps",
            "6",
            "--crop-size",
            "32",
            "--prompt-length",
            "3",
            "--seed",
            "42",
        ]));
    };
    run("a.ntar");
    run("b.ntar");
    assert_eq!(
        std::fs::read(dir.path().join("a.ntar")).unwrap(),
        std::fs::read(dir.path().join("b.ntar")).unwrap()
    );
}

#[test]
fn refuses_overwrite_without_force() {
    let dir = tempdir().unwrap();
    write_dataset(dir.path(), "d", 2, 32, &["car"], 4);
    let args = |dir: &std::path::Path| {
        vec![
            "train-prompts".to_string(),
            "--data".into(),
            dir.join("d_images").to_string_lossy().into_owned(),
            "--out".into(),
            dir.join("p.ntar").to_string_lossy().into_owned(),
            "--steps".into(),
            "2".into(),
            "--crop-size".into(),
            "32".into(),
        ]
    };
    run_ok(nocturne().args(args(dir.path())));
    // second run without --force must refuse with a config error
    let code = exit_code(nocturne().args(args(dir.path())));
    assert_eq!(code, 2);
    // --force succeeds
    let mut forced = args(dir.path());
    forced.push("--force".into());
    run_ok(nocturne().args(forced));
}

#[test]
fn train_requires_datasets_and_prompt_checkpoint() {
    let dir = tempdir().unwrap();
    // no datasets -> 2
    let code = exit_code(nocturne().args([
        "train",
        "--out-dir",
        dir.path().join("run").to_str().unwrap(),
        "--steps",
        "1",
    ]));
    assert_eq!(code, 2);

    // lambda_prompt > 0 (default) with a missing prompt checkpoint -> 2
    let manifest = write_dataset(dir.path(), "d", 2, 32, &["car"], 5);
    let code = exit_code(nocturne().args([
        "train",
        "--out-dir",
        dir.path().join("run2").to_str().unwrap(),
        "--dataset",
        manifest.to_str().unwrap(),
        "--steps",
        "1",
        "--patch-size",
        "32",
        "--prompts",
        dir.path().join("missing.ntar").to_str().unwrap(),
    ]));
    assert_eq!(code, 2);
}

#[test]
fn enhance_zero_weight_model_is_identity_up_to_quantization() {
    let dir = tempdir().unwrap();
    // model whose final layer is zero: alpha = 0 everywhere
    let mut params = CurveNetworkParams::init(8, 4, 1).unwrap();
    let last = params.layers.last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(0.0);
    let model = dir.path().join("model.ntar");
    params.save(&model).unwrap();

    let in_dir = dir.path().join("in");
    std::fs::create_dir_all(in_dir.join("sub")).unwrap();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(6);
    let img = dark_image(24, &mut rng);
    img.save(in_dir.join("a.png")).unwrap();
    img.save(in_dir.join("sub/b.png")).unwrap();

    let out_dir = dir.path().join("out");
    run_ok(nocturne().args([
        "enhance",
        "--model",
        model.to_str().unwrap(),
        "--input",
        in_dir.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    // mirrored structure
    assert!(out_dir.join("a.png").is_file());
    assert!(out_dir.join("sub/b.png").is_file());
    let back = ImageTensor::load(out_dir.join("a.png")).unwrap();
    for (x, y) in img.data().iter().zip(back.data().iter()) {
        assert!((x - y).abs() <= 1.0 / 255.0 + 1e-6);
    }
}

#[test]
fn enhance_brightens_when_alpha_is_nonnegative() {
    let dir = tempdir().unwrap();
    // positive final-layer bias, zero weights: alpha = tanh(b) > 0
    let mut params = CurveNetworkParams::init(8, 4, 2).unwrap();
    let last = params.layers.last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(0.5);
    let model = dir.path().join("model.ntar");
    params.save(&model).unwrap();

    let in_dir = dir.path().join("in");
    std::fs::create_dir_all(&in_dir).unwrap();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
    for i in 0..3 {
        dark_image(20, &mut rng)
            .save(in_dir.join(format!("{i}.png")))
            .unwrap();
    }
    let out_dir = dir.path().join("out");
    run_ok(nocturne().args([
        "enhance",
        "--model",
        model.to_str().unwrap(),
        "--input",
        in_dir.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    for img in summary["images"].as_array().unwrap() {
        let before = img["mean_brightness_before"].as_f64().unwrap();
        let after = img["mean_brightness_after"].as_f64().unwrap();
        assert!(after >= before - 1e-4, "{before} -> {after}");
    }
}

#[test]
fn enhance_skips_unreadable_and_fails_when_all_fail() {
    let dir = tempdir().unwrap();
    let mut params = CurveNetworkParams::init(8, 4, 3).unwrap();
    let last = params.layers.last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.fill(0.0);
    let model = dir.path().join("model.ntar");
    params.save(&model).unwrap();

    let in_dir = dir.path().join("in");
    std::fs::create_dir_all(&in_dir).unwrap();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(8);
    dark_image(16, &mut rng).save(in_dir.join("good.png")).unwrap();
    std::fs::write(in_dir.join("bad.png"), b"not a png").unwrap();

    let out_dir = dir.path().join("out");
    run_ok(nocturne().args([
        "enhance",
        "--model",
        model.to_str().unwrap(),
        "--input",
        in_dir.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["enhanced"], 1);
    assert_eq!(summary["failed"], 1);

    // all corrupt -> exit 1
    let bad_dir = dir.path().join("allbad");
    std::fs::create_dir_all(&bad_dir).unwrap();
    std::fs::write(bad_dir.join("x.png"), b"nope").unwrap();
    let code = exit_code(nocturne().args([
        "enhance",
        "--model",
        model.to_str().unwrap(),
        "--input",
        bad_dir.to_str().unwrap(),
        "--output",
        dir.path().join("out2").to_str().unwrap(),
    ]));
    assert_eq!(code, 1);
}

#[test]
fn manifest_written_before_outputs() {
    let dir = tempdir().unwrap();
    write_dataset(dir.path(), "d", 2, 32, &["car"], 9);
    // force a failure AFTER manifest write by pointing encoder at a
    // missing checkpoint
    let code = exit_code(nocturne().args([
        "train-prompts",
        "--data",
        dir.path().join("d_images").to_str().unwrap(),
        "--out",
        dir.path().join("p.ntar").to_str().unwrap(),
        "--steps",
        "1",
        "--crop-size",
        "32",
        "--encoder",
        "clip",
    ]));
    assert_eq!(code, 2, "clip without checkpoint must be a config error");
    assert!(
        dir.path().join("p.ntar.manifest.json").is_file(),
        "manifest must exist even though the run failed"
    );
    assert!(!dir.path().join("p.ntar").exists());
}

#[test]
fn stats_and_histeq_produce_outputs() {
    let dir = tempdir().unwrap();
    let manifest = write_dataset(dir.path(), "d", 3, 32, &["car", "dog"], 10);

    let stats_dir = dir.path().join("stats");
    run_ok(nocturne().args([
        "stats",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out-dir",
        stats_dir.to_str().unwrap(),
    ]));
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(stats_dir.join("stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["datasets"][0]["proportion"], 1.0);
    assert!(stats_dir.join("brightness_histograms.png").is_file());

    let he_dir = dir.path().join("he");
    run_ok(nocturne().args([
        "histeq",
        "--input",
        dir.path().join("d_images").to_str().unwrap(),
        "--output",
        he_dir.to_str().unwrap(),
    ]));
    assert!(he_dir.join("0000.png").is_file());
}

#[test]
fn cli_resume_continues_bitwise_identically() {
    let dir = tempdir().unwrap();
    let manifest = write_dataset(dir.path(), "d", 6, 32, &["car", "dog"], 12);
    let toml = dir.path().join("cfg.toml");
    write_train_toml(&toml, &manifest, 30, 4, 16, 8, None, "workers = 2\n");

    // uninterrupted 30-step run
    let full = dir.path().join("full");
    run_ok(nocturne().args([
        "train",
        "--config",
        toml.to_str().unwrap(),
        "--out-dir",
        full.to_str().unwrap(),
        "--lambda-prompt",
        "0",
    ]));

    // 15 steps, then resume to 30
    let half = dir.path().join("half");
    run_ok(nocturne().args([
        "train",
        "--config",
        toml.to_str().unwrap(),
        "--out-dir",
        half.to_str().unwrap(),
        "--steps",
        "15",
        "--lambda-prompt",
        "0",
    ]));
    let resumed = dir.path().join("resumed");
    run_ok(nocturne().args([
        "train",
        "--config",
        toml.to_str().unwrap(),
        "--out-dir",
        resumed.to_str().unwrap(),
        "--lambda-prompt",
        "0",
        "--resume",
        half.join("step_000015.ntar").to_str().unwrap(),
    ]));

    let a = std::fs::read(full.join("step_000030.ntar")).unwrap();
    let b = std::fs::read(resumed.join("step_000030.ntar")).unwrap();
    assert_eq!(a, b, "resumed checkpoint must equal the uninterrupted one");

    // resumed CSV rows 16..30 must match the tail of the full run
    let full_csv = std::fs::read_to_string(full.join("loss.csv")).unwrap();
    let resumed_csv = std::fs::read_to_string(resumed.join("loss.csv")).unwrap();
    let tail: Vec<&str> = full_csv.lines().skip(16).collect();
    let resumed_rows: Vec<&str> = resumed_csv.lines().skip(1).collect();
    assert_eq!(tail, resumed_rows);
}

#[test]
fn lambda_flags_change_logged_breakdown() {
    let dir = tempdir().unwrap();
    let manifest = write_dataset(dir.path(), "d", 4, 32, &["car"], 11);
    let toml = dir.path().join("cfg.toml");
    write_train_toml(&toml, &manifest, 6, 1, 16, 8, None, "");
    let out = dir.path().join("run");
    run_ok(nocturne().args([
        "train",
        "--config",
        toml.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--lambda-cls",
        "0",
        "--lambda-prompt",
        "0",
        "--lambda-rgb",
        "0",
    ]));
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,total,exp,spa,rgb,tv,cls,prompt");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 8);
        // disabled terms log exactly zero
        assert_eq!(cols[4], "0");
        assert_eq!(cols[6], "0");
        assert_eq!(cols[7], "0");
        // enabled terms are live
        assert_ne!(cols[2], "0");
    }
}
