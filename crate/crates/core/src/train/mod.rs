//! Stage-2 training: configuration, the weighted total objective and the
//! optimization loop.

pub mod optim;
mod trainer;

pub use trainer::{
    load_enhancer, total_loss, BatchSource, FixedPatches, LossBreakdown, StepRecord,
    TrainItem, Trainer,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ExposureConfig, SpatialConfig};
use crate::vlm::EncoderConfig;

/// The six loss-term coefficients. A zero coefficient disables its term
/// entirely (it is neither computed nor logged as non-zero).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_exp: f32,
    pub lambda_spa: f32,
    pub lambda_rgb: f32,
    pub lambda_tv: f32,
    pub lambda_cls: f32,
    pub lambda_prompt: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_exp: 10.0,
            lambda_spa: 1.0,
            lambda_rgb: 5.0,
            lambda_tv: 200.0,
            lambda_cls: 1.0,
            lambda_prompt: 1.0,
        }
    }
}

impl LossWeights {
    /// The four-term objective without encoder guidance.
    pub fn baseline() -> Self {
        LossWeights {
            lambda_cls: 0.0,
            lambda_prompt: 0.0,
            ..LossWeights::default()
        }
    }

    pub fn as_array(&self) -> [f32; 6] {
        [
            self.lambda_exp,
            self.lambda_spa,
            self.lambda_rgb,
            self.lambda_tv,
            self.lambda_cls,
            self.lambda_prompt,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .as_array()
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::config(
                "loss weights must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetEntry {
    pub manifest: PathBuf,
    #[serde(default)]
    pub weight: Option<f64>,
}

/// Full stage-2 configuration; the TOML file mirrors these field names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub grad_clip_norm: f32,
    pub checkpoint_every: u64,
    pub keep_checkpoints: usize,
    pub workers: usize,
    pub min_score: f32,
    pub min_context: usize,
    pub network_width: usize,
    pub n_iterations: usize,
    pub exposure_patch_size: usize,
    pub exposure_target: f32,
    pub spatial_region_size: usize,
    pub weights: LossWeights,
    pub encoder: EncoderConfig,
    pub prompt_checkpoint: Option<PathBuf>,
    pub datasets: Vec<DatasetEntry>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 105_000,
            batch_size: 8,
            patch_size: 224,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            grad_clip_norm: 0.1,
            checkpoint_every: 5_000,
            keep_checkpoints: 3,
            workers: 2,
            min_score: crate::data::DEFAULT_MIN_SCORE,
            min_context: crate::data::patch::DEFAULT_MIN_CONTEXT,
            network_width: crate::curve::CurveNetworkParams::default_arch(0)
                .map(|p| p.width)
                .unwrap_or(32),
            n_iterations: 8,
            exposure_patch_size: 16,
            exposure_target: 0.6,
            spatial_region_size: 4,
            weights: LossWeights::default(),
            encoder: EncoderConfig::default(),
            prompt_checkpoint: None,
            datasets: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn exposure_config(&self) -> ExposureConfig {
        ExposureConfig {
            patch_size: self.exposure_patch_size,
            target: self.exposure_target,
        }
    }

    pub fn spatial_config(&self) -> SpatialConfig {
        SpatialConfig {
            region_size: self.spatial_region_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.exposure_config().validate()?;
        self.spatial_config().validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::config("steps and batch size must be positive"));
        }
        if self.patch_size < self.exposure_patch_size
            || self.patch_size < self.spatial_region_size
        {
            return Err(Error::config(
                "patch size must cover at least one exposure patch and one spatial region",
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if !self.grad_clip_norm.is_finite() || self.grad_clip_norm <= 0.0 {
            return Err(Error::config("gradient clip norm must be positive"));
        }
        if self.weights.lambda_prompt > 0.0 && self.prompt_checkpoint.is_none() {
            return Err(Error::config(
                "lambda_prompt > 0 requires `prompt_checkpoint` (or set lambda_prompt = 0)",
            ));
        }
        Ok(())
    }
}

/// Reads a TOML training config.
pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
