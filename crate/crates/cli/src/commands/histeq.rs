//! Histogram-equalization baseline over a directory of images.

use std::path::PathBuf;

use anyhow::{bail, Result};

use nocturne_core::baseline::histogram_equalization;
use nocturne_core::ImageTensor;

use crate::commands::collect_images;
use crate::manifest::RunManifest;

#[derive(clap::Args)]
pub struct Args {
    /// Image file or directory.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output directory; mirrors the input structure.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: Args) -> Result<()> {
    let files = collect_images(&args.input)?;
    if files.is_empty() {
        bail!(nocturne_core::Error::config(format!(
            "no images found under {}",
            args.input.display()
        )));
    }
    let planned: Vec<PathBuf> = files.iter().map(|(_, rel)| args.output.join(rel)).collect();
    RunManifest::new(
        "histeq",
        None,
        serde_json::json!({ "input": args.input }),
    )
    .with_outputs(planned)
    .write_guarded(&args.output.join("manifest.json"), args.force)?;

    let mut done = 0usize;
    let mut failed = 0usize;
    for (abs, rel) in &files {
        let out_path = args.output.join(rel);
        let result = ImageTensor::load(abs)
            .and_then(|img| histogram_equalization(&img))
            .and_then(|eq| {
                if let Some(parent) = out_path.parent() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| nocturne_core::Error::io(parent, e))?;
                }
                eq.save(&out_path)
            });
        match result {
            Ok(()) => done += 1,
            Err(e) => {
                log::warn!("failed on {}: {e}", abs.display());
                failed += 1;
            }
        }
    }
    if done == 0 {
        bail!(nocturne_core::Error::invalid_state(format!(
            "all {failed} inputs failed"
        )));
    }
    println!("equalized {done} image(s), {failed} failed");
    Ok(())
}
