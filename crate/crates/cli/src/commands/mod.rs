pub mod enhance;
pub mod histeq;
pub mod stats;
pub mod train;
pub mod train_prompts;

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Collects (absolute, relative) image paths under `root` in sorted
/// order; a single file yields one entry.
pub fn collect_images(root: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if root.is_file() {
        let rel = PathBuf::from(root.file_name().unwrap_or_default());
        return Ok(vec![(root.to_path_buf(), rel)]);
    }
    if !root.is_dir() {
        bail!(nocturne_core::Error::config(format!(
            "input path {} does not exist",
            root.display()
        )));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() && is_image_path(entry.path()) {
            let rel = entry
                .path()
                .strip_prefix(root)
                .unwrap_or(entry.path())
                .to_path_buf();
            out.push((entry.path().to_path_buf(), rel));
        }
    }
    out.sort();
    Ok(out)
}

/// `model.ntar` + `.loss.csv` -> `model.ntar.loss.csv`
pub fn path_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// Deterministic loss-log row formatting (shortest round-trip floats).
pub fn format_loss_row(step: u64, total: f32, terms: &[f32; 6]) -> String {
    format!(
        "{step},{total},{},{},{},{},{},{}",
        terms[0], terms[1], terms[2], terms[3], terms[4], terms[5]
    )
}
