//! Shared fixtures for the CLI and acceptance suites.
#![allow(dead_code)] // each test target uses its own subset

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array3;
use rand::Rng;
pub use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use nocturne_core::semantic::ClassLabel;
use nocturne_core::train::TrainItem;
use nocturne_core::ImageTensor;

pub fn nocturne() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nocturne"))
}

pub fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn nocturne");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn nocturne").status.code().unwrap_or(-1)
}

/// A dark, lightly noisy RGB image.
pub fn dark_image(side: usize, rng: &mut ChaCha20Rng) -> ImageTensor {
    let base = rng.gen_range(0.03..0.22f32);
    ImageTensor::new(Array3::from_shape_fn((side, side, 3), |(_, _, c)| {
        (base + 0.01 * c as f32 + rng.gen_range(-0.02..0.02f32)).clamp(0.0, 1.0)
    }))
    .unwrap()
}

/// Writes `n` synthetic dark images plus a manifest with one centered
/// box per image. Returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    n: usize,
    side: usize,
    labels: &[&str],
    seed: u64,
) -> PathBuf {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let img_dir = dir.join(format!("{name}_images"));
    std::fs::create_dir_all(&img_dir).unwrap();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for i in 0..n {
        let file = format!("{name}_images/{i:04}.png");
        dark_image(side, &mut rng).save(dir.join(&file)).unwrap();
        images.push(serde_json::json!({
            "id": i, "file": file, "width": side, "height": side
        }));
        let q = side as f64 / 4.0;
        annotations.push(serde_json::json!({
            "image_id": i,
            "bbox": [q, q, 2.0 * q, 2.0 * q],
            "label": labels[i % labels.len()],
        }));
    }
    let manifest = dir.join(format!("{name}.json"));
    std::fs::write(
        &manifest,
        serde_json::to_string_pretty(
            &serde_json::json!({ "images": images, "annotations": annotations }),
        )
        .unwrap(),
    )
    .unwrap();
    manifest
}

/// Fixed pool of labeled dark patches for smoke training.
pub fn dark_patches(n: usize, side: usize, seed: u64) -> Vec<TrainItem> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| TrainItem {
            patch: dark_image(side, &mut rng),
            label: ClassLabel::new(["car", "dog", "person", "bicycle"][i % 4]).unwrap(),
            id: format!("fixed/{i}"),
        })
        .collect()
}

/// Minimal TOML config for tiny CLI training runs.
#[allow(clippy::too_many_arguments)]
pub fn write_train_toml(
    path: &Path,
    manifest: &Path,
    steps: u64,
    seed: u64,
    patch: usize,
    width: usize,
    prompt_ckpt: Option<&Path>,
    extra: &str,
) {
    let prompt_line = match prompt_ckpt {
        Some(p) => format!("prompt_checkpoint = {:?}\n", p.to_string_lossy()),
        None => String::new(),
    };
    let text = format!(
        r#"
seed = {seed}
steps = {steps}
batch_size = 4
patch_size = {patch}
learning_rate = 1e-3
network_width = {width}
n_iterations = 4
exposure_patch_size = 8
checkpoint_every = 1000000

{prompt_line}{extra}

[encoder]
kind = "stub"
embed_dim = 64

[[datasets]]
manifest = {manifest:?}
"#,
        manifest = manifest.to_string_lossy(),
    );
    std::fs::write(path, text).unwrap();
}
