//! Stage-2 subcommand: train the curve estimator over dataset mixtures.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;

use nocturne_core::data::{load_annotations, mixture::build_mixture, AnnotationSet};
use nocturne_core::prior::LearnedPromptPair;
use nocturne_core::train::{load_train_config, BatchSource, TrainConfig, Trainer};
use nocturne_core::vlm::build_encoder;

use crate::commands::format_loss_row;
use crate::manifest::{config_json, RunManifest};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Four zero-reference terms only.
    Baseline,
    /// Baseline plus open-vocabulary classification.
    Cls,
    /// Baseline plus the learned prompt prior.
    Prompt,
    /// Everything enabled.
    Full,
}

#[derive(clap::Args)]
pub struct Args {
    /// TOML config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Dataset manifest(s) to append to the config's list.
    #[arg(long = "dataset")]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Loss-term preset; individual --lambda-* flags override it.
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub lambda_exp: Option<f32>,
    #[arg(long)]
    pub lambda_spa: Option<f32>,
    #[arg(long)]
    pub lambda_rgb: Option<f32>,
    #[arg(long)]
    pub lambda_tv: Option<f32>,
    #[arg(long)]
    pub lambda_cls: Option<f32>,
    #[arg(long)]
    pub lambda_prompt: Option<f32>,
    /// Prompt checkpoint from `train-prompts`.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long)]
    pub encoder_checkpoint: Option<PathBuf>,
    /// Resume from a training checkpoint (bitwise-identical under the
    /// same config, seed and workers).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

fn apply_overrides(cfg: &mut TrainConfig, args: &Args) {
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.patch_size {
        cfg.patch_size = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(kind) = &args.encoder {
        cfg.encoder.kind = kind.clone();
    }
    if let Some(p) = &args.encoder_checkpoint {
        cfg.encoder.checkpoint = Some(p.clone());
    }
    if let Some(p) = &args.prompts {
        cfg.prompt_checkpoint = Some(p.clone());
    }
    if let Some(preset) = args.ablation {
        let (cls, prompt) = match preset {
            Ablation::Baseline => (0.0, 0.0),
            Ablation::Cls => (1.0, 0.0),
            Ablation::Prompt => (0.0, 1.0),
            Ablation::Full => (1.0, 1.0),
        };
        cfg.weights.lambda_cls = cls;
        cfg.weights.lambda_prompt = prompt;
    }
    for (slot, value) in [
        (&mut cfg.weights.lambda_exp, args.lambda_exp),
        (&mut cfg.weights.lambda_spa, args.lambda_spa),
        (&mut cfg.weights.lambda_rgb, args.lambda_rgb),
        (&mut cfg.weights.lambda_tv, args.lambda_tv),
        (&mut cfg.weights.lambda_cls, args.lambda_cls),
        (&mut cfg.weights.lambda_prompt, args.lambda_prompt),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    for manifest in &args.datasets {
        cfg.datasets.push(nocturne_core::train::DatasetEntry {
            manifest: manifest.clone(),
            weight: None,
        });
    }
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => load_train_config(path)?,
        None => TrainConfig::default(),
    };
    apply_overrides(&mut cfg, &args);
    cfg.validate()?;
    if cfg.datasets.is_empty() {
        bail!(nocturne_core::Error::config(
            "no datasets configured (use --dataset or the config file)"
        ));
    }

    let loss_csv = args.out_dir.join("loss.csv");
    let manifest_path = args.out_dir.join("manifest.json");
    RunManifest::new("train", Some(cfg.seed), config_json(&cfg))
        .with_outputs(vec![loss_csv.clone()])
        .write_guarded(&manifest_path, args.force)?;

    let prompts = match &cfg.prompt_checkpoint {
        Some(path) if cfg.weights.lambda_prompt > 0.0 => Some(
            LearnedPromptPair::load(path)
                .map_err(|e| nocturne_core::Error::config(format!(
                    "prompt checkpoint {}: {e}",
                    path.display()
                )))?,
        ),
        _ => None,
    };

    let encoder = build_encoder::<f32>(&cfg.encoder)?;
    let checksum_before = encoder.weight_checksum();

    let mut sources: Vec<(AnnotationSet, Option<f64>)> = Vec::new();
    for entry in &cfg.datasets {
        let set = load_annotations(&entry.manifest, cfg.min_score)?;
        log::info!(
            "dataset {}: {} records, {} samples",
            set.dataset_id,
            set.records.len(),
            set.sample_count()
        );
        sources.push((set, entry.weight));
    }
    let stream = build_mixture(sources, cfg.seed, cfg.patch_size, cfg.min_context)?;
    let source = BatchSource::Mixture(stream);

    let mut trainer = match &args.resume {
        Some(ckpt) => Trainer::resume(cfg.clone(), source, encoder.clone(), prompts.as_ref(), ckpt)?,
        None => Trainer::new(cfg.clone(), source, encoder.clone(), prompts.as_ref())?,
    };

    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(&loss_csv)
            .with_context(|| format!("writing {}", loss_csv.display()))?,
    );
    writeln!(csv, "step,total,exp,spa,rgb,tv,cls,prompt")?;
    let mut last_total = f32::NAN;
    {
        let mut observer = |record: &nocturne_core::train::StepRecord| {
            last_total = record.total;
            let line =
                format_loss_row(record.step, record.total, &record.breakdown.as_array());
            let _ = writeln!(csv, "{line}");
            if record.step.is_multiple_of(100) {
                log::info!("step {} total {}", record.step, record.total);
            }
        };
        trainer.run(Some(&args.out_dir), &mut observer)?;
    }
    csv.flush()?;

    if encoder.weight_checksum() != checksum_before {
        bail!(nocturne_core::Error::invalid_state(
            "encoder weights changed during training"
        ));
    }

    println!(
        "trained to step {} (final total {last_total}); checkpoints in {}",
        trainer.step_count(),
        args.out_dir.display()
    );
    Ok(())
}
