//! Dataset statistics subcommand.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use nocturne_core::data::stats::{compute_stats, render_histogram_png};
use nocturne_core::data::{load_annotations, DEFAULT_MIN_SCORE};

use crate::manifest::RunManifest;

#[derive(clap::Args)]
pub struct Args {
    /// Dataset manifest(s).
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_SCORE)]
    pub min_score: f32,
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: Args) -> Result<()> {
    let json_path = args.out_dir.join("stats.json");
    let plot_path = args.out_dir.join("brightness_histograms.png");
    RunManifest::new(
        "stats",
        None,
        serde_json::json!({ "manifests": args.manifests, "min_score": args.min_score }),
    )
    .with_outputs(vec![json_path.clone(), plot_path.clone()])
    .write_guarded(&args.out_dir.join("manifest.json"), args.force)?;

    let mut sets = Vec::new();
    for manifest in &args.manifests {
        sets.push(load_annotations(manifest, args.min_score)?);
    }
    if sets.is_empty() {
        bail!(nocturne_core::Error::config("no manifests given"));
    }
    let stats = compute_stats(&sets)?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&stats)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    render_histogram_png(&stats, &plot_path)?;

    for entry in &stats.datasets {
        println!(
            "{}: {} samples ({:.1}%), {} images, {} unreadable",
            entry.dataset_id,
            entry.samples,
            entry.proportion * 100.0,
            entry.images,
            entry.unreadable_images
        );
    }
    println!("stats: {}", json_path.display());
    println!("plot:  {}", plot_path.display());
    Ok(())
}
