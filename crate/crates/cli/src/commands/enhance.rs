//! Batch enhancement with a trained model.

use std::path::PathBuf;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use nocturne_core::curve::enhance;
use nocturne_core::train::load_enhancer;
use nocturne_core::ImageTensor;

use crate::commands::collect_images;
use crate::manifest::RunManifest;

#[derive(clap::Args)]
pub struct Args {
    /// Model checkpoint (`best.ntar` or a training `step_*.ntar`).
    #[arg(long)]
    pub model: PathBuf,
    /// Image file or directory.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output directory; mirrors the input structure.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Serialize, Clone)]
struct ImageRecord {
    file: String,
    mean_brightness_before: f32,
    mean_brightness_after: f32,
}

#[derive(Serialize)]
struct Summary {
    model: PathBuf,
    enhanced: usize,
    failed: usize,
    images: Vec<ImageRecord>,
}

pub fn run(args: Args) -> Result<()> {
    let params = load_enhancer(&args.model)?;
    params.validate()?;

    let files = collect_images(&args.input)?;
    if files.is_empty() {
        bail!(nocturne_core::Error::config(format!(
            "no images found under {}",
            args.input.display()
        )));
    }

    let summary_path = args.output.join("summary.json");
    let planned: Vec<PathBuf> = files
        .iter()
        .map(|(_, rel)| args.output.join(rel))
        .chain([summary_path.clone()])
        .collect();
    RunManifest::new(
        "enhance",
        None,
        serde_json::json!({ "model": args.model, "input": args.input }),
    )
    .with_outputs(planned)
    .write_guarded(&args.output.join("manifest.json"), args.force)?;

    let results: Mutex<Vec<ImageRecord>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let workers = args.workers.max(1);
    let chunk = files.len().div_ceil(workers);
    let (params_ref, out_root, results_ref, failures_ref) =
        (&params, &args.output, &results, &failures);
    std::thread::scope(|scope| {
        for chunk_files in files.chunks(chunk) {
            scope.spawn(move || {
                for (abs, rel) in chunk_files {
                    let out_path = out_root.join(rel);
                    match process_one(params_ref, abs, &out_path, rel) {
                        Ok(record) => results_ref.lock().unwrap().push(record),
                        Err(e) => {
                            log::warn!("failed on {}: {e}", abs.display());
                            failures_ref.lock().unwrap().push(rel.display().to_string());
                        }
                    }
                }
            });
        }
    });

    let mut images = results.into_inner().unwrap();
    images.sort_by(|a, b| a.file.cmp(&b.file));
    let failed = failures.into_inner().unwrap().len();
    let summary = Summary {
        model: args.model.clone(),
        enhanced: images.len(),
        failed,
        images,
    };
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", summary_path.display()))?;

    if summary.enhanced == 0 {
        bail!(nocturne_core::Error::invalid_state(format!(
            "all {failed} inputs failed"
        )));
    }
    println!(
        "enhanced {} image(s), {} failed; summary at {}",
        summary.enhanced,
        failed,
        summary_path.display()
    );
    Ok(())
}

fn process_one(
    params: &nocturne_core::curve::CurveNetworkParams,
    input: &PathBuf,
    output: &PathBuf,
    rel: &std::path::Path,
) -> Result<ImageRecord> {
    let image = ImageTensor::load(input)?;
    let (enhanced, _) = enhance(&image, params)?;
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent)?;
    }
    enhanced.save(output)?;
    Ok(ImageRecord {
        file: rel.display().to_string(),
        mean_brightness_before: image.mean_brightness(),
        mean_brightness_after: enhanced.mean_brightness(),
    })
}
