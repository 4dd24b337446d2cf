//! Stage-1 subcommand: learn the positive/negative prompt pair from a
//! directory of low-light images.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use nocturne_core::prior::{train_prompts, AugmentationConfig, PromptTrainConfig};
use nocturne_core::vlm::{build_encoder, EncoderConfig};
use nocturne_core::ImageTensor;

use crate::commands::{collect_images, path_with_suffix};
use crate::manifest::{config_json, RunManifest};

#[derive(clap::Args)]
pub struct Args {
    /// Directory (or single file) of training images.
    #[arg(long)]
    pub data: PathBuf,
    /// Prompt checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_pairs: usize,
    #[arg(long, default_value_t = 896)]
    pub crop_size: usize,
    #[arg(long, default_value_t = 4)]
    pub pool_factor: usize,
    #[arg(long, default_value_t = 16)]
    pub prompt_length: usize,
    /// Fraction of the corpus held out for the discrimination check.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f32,
    /// Encoder kind: stub, stub-synthetic, stub-constant or clip.
    #[arg(long, default_value = "stub")]
    pub encoder: String,
    #[arg(long)]
    pub encoder_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer_merges: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub embed_dim: usize,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: Args) -> Result<()> {
    let encoder_cfg = EncoderConfig {
        kind: args.encoder.clone(),
        embed_dim: args.embed_dim,
        checkpoint: args.encoder_checkpoint.clone(),
        tokenizer_merges: args.tokenizer_merges.clone(),
    };
    let cfg = PromptTrainConfig {
        steps: args.steps,
        lr: args.lr,
        batch_pairs: args.batch_pairs,
        crop_size: args.crop_size,
        pool_factor: args.pool_factor,
        prompt_length: args.prompt_length,
        holdout_fraction: args.holdout,
        seed: args.seed,
        augment: AugmentationConfig {
            seed: args.seed,
            ..AugmentationConfig::default()
        },
    };
    cfg.validate()?;

    let loss_csv = path_with_suffix(&args.out, ".loss.csv");
    let manifest_path = path_with_suffix(&args.out, ".manifest.json");
    let sidecar = path_with_suffix(&args.out, ".json");
    RunManifest::new(
        "train-prompts",
        Some(args.seed),
        serde_json::json!({
            "train": config_json(&cfg),
            "encoder": config_json(&encoder_cfg),
            "data": args.data,
        }),
    )
    .with_outputs(vec![args.out.clone(), sidecar, loss_csv.clone()])
    .write_guarded(&manifest_path, args.force)?;

    let files = collect_images(&args.data)?;
    if files.is_empty() {
        bail!(nocturne_core::Error::config(format!(
            "no images found under {}",
            args.data.display()
        )));
    }
    let mut corpus = Vec::new();
    let mut unreadable = 0usize;
    for (abs, _) in &files {
        match ImageTensor::load(abs) {
            Ok(img) => corpus.push(img),
            Err(e) => {
                log::warn!("skipping {}: {e}", abs.display());
                unreadable += 1;
            }
        }
    }
    if corpus.is_empty() {
        bail!(nocturne_core::Error::config(
            "no readable images in the corpus"
        ));
    }

    let encoder = build_encoder::<f32>(&encoder_cfg)?;
    let checksum_before = encoder.weight_checksum();
    let outcome = train_prompts(&corpus, &cfg, &encoder)?;
    if encoder.weight_checksum() != checksum_before {
        bail!(nocturne_core::Error::invalid_state(
            "encoder weights changed during prompt training"
        ));
    }

    outcome.prompts.save(&args.out)?;
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&loss_csv)
            .with_context(|| format!("writing {}", loss_csv.display()))?,
    );
    writeln!(csv, "step,loss")?;
    for (i, loss) in outcome.loss_history.iter().enumerate() {
        writeln!(csv, "{},{}", i + 1, loss)?;
    }
    csv.flush()?;

    println!(
        "trained {} steps on {} images ({} unreadable skipped)",
        args.steps,
        corpus.len(),
        unreadable
    );
    if let Some(acc) = outcome.holdout_accuracy {
        println!("held-out pooled/subsampled accuracy: {acc:.3}");
    }
    println!("prompt checkpoint: {}", args.out.display());
    Ok(())
}
