//! Learned image-prior prompts.
//!
//! Stage 1 trains a positive/negative prompt pair to separate average-
//! pooled (denoised-proxy) crops from stride-subsampled (noise-keeping)
//! crops of photometrically augmented low-light images. Stage 2 reuses
//! the frozen pair through [`prior_loss`], which pulls enhanced images
//! toward the positive prompt.

use std::path::Path;

use ndarray::{Array2, ArrayD, Axis, Slice};
use nocturne_autograd::{kernels, Scalar, Tape, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archive::{read_sidecar, write_sidecar, TensorArchive};
use crate::error::{Error, Result};
use crate::image::{hsv_to_rgb, rgb_to_hsv, ImageTensor};
use crate::losses::LossValue;
use crate::train::optim::Adam;
use crate::vlm::{
    cast_image, embed_image_values, match_positive_loss_node, EncoderHandle,
    ImageTextEncoder,
};

const PROMPT_FORMAT_VERSION: u32 = 1;

/// Photometric augmentation ranges. Factors are sampled uniformly; the
/// three adjustments run in random order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugmentationConfig {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    /// Hue rotation range in turns of the hue circle.
    pub hue_shift: (f32, f32),
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            brightness: (0.3, 1.5),
            contrast: (0.5, 1.5),
            hue_shift: (-0.1, 0.1),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn identity() -> Self {
        AugmentationConfig {
            brightness: (1.0, 1.0),
            contrast: (1.0, 1.0),
            hue_shift: (0.0, 0.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("hue_shift", self.hue_shift),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::config(format!(
                    "{name} range ({lo}, {hi}) is not a finite interval"
                )));
            }
        }
        if self.brightness.0 <= 0.0 || self.contrast.0 <= 0.0 {
            return Err(Error::config("brightness/contrast factors must be positive"));
        }
        Ok(())
    }
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f32, f32)) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Deterministic form: the generator is derived from `cfg.seed`.
pub fn photometric_augment(image: &ImageTensor, cfg: &AugmentationConfig) -> Result<ImageTensor> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    photometric_augment_with(image, cfg, &mut rng)
}

/// Applies brightness scaling, contrast about the global mean and hue
/// rotation, in random order, then clamps to `[0, 1]`. Adjustments whose
/// sampled factor is exactly the identity are skipped.
pub fn photometric_augment_with<R: Rng>(
    image: &ImageTensor,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let brightness = sample_range(rng, cfg.brightness);
    let contrast = sample_range(rng, cfg.contrast);
    let hue = sample_range(rng, cfg.hue_shift);
    let mut order = [0usize, 1, 2];
    order.shuffle(rng);

    let mut data = image.data().clone();
    for op in order {
        match op {
            0 if brightness != 1.0 => data.mapv_inplace(|v| v * brightness),
            1 if contrast != 1.0 => {
                let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
                let mean = mean as f32;
                data.mapv_inplace(|v| mean + (v - mean) * contrast);
            }
            2 if hue != 0.0 => {
                let (h, w, _) = data.dim();
                for y in 0..h {
                    for x in 0..w {
                        let (hh, s, v) = rgb_to_hsv(
                            data[(y, x, 0)].clamp(0.0, 1.0),
                            data[(y, x, 1)].clamp(0.0, 1.0),
                            data[(y, x, 2)].clamp(0.0, 1.0),
                        );
                        let (r, g, b) = hsv_to_rgb(hh + hue, s, v);
                        data[(y, x, 0)] = r;
                        data[(y, x, 1)] = g;
                        data[(y, x, 2)] = b;
                    }
                }
            }
            _ => {}
        }
    }
    ImageTensor::from_clamped(data)
}

/// A positive (average-pooled) and negative (subsampled) crop pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub positive: ImageTensor,
    pub negative: ImageTensor,
    pub source_id: String,
}

/// Positive: `m x m` average pooling. Negative: every `m`-th pixel,
/// offset 0. The crop sides must be divisible by `m`.
pub fn make_sample_pair(image: &ImageTensor, m: usize) -> Result<SamplePair> {
    if m == 0 {
        return Err(Error::invalid_argument("pooling factor must be >= 1"));
    }
    if !image.height().is_multiple_of(m) || !image.width().is_multiple_of(m) {
        return Err(Error::invalid_argument(format!(
            "crop {}x{} is not divisible by the pooling factor {}",
            image.height(),
            image.width(),
            m
        )));
    }
    let positive = ImageTensor::from_clamped(kernels::avg_pool2d(image.view(), m))?;
    let negative = ImageTensor::new(kernels::subsample2d(image.view(), m))?;
    Ok(SamplePair {
        positive,
        negative,
        source_id: String::new(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PromptMetadata {
    pub format_version: u32,
    pub prompt_length: usize,
    pub token_width: usize,
    pub encoder: String,
    pub steps: usize,
    pub seed: u64,
}

/// The trained positive/negative prompt-token matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPromptPair {
    pub positive: Array2<f32>,
    pub negative: Array2<f32>,
    pub metadata: PromptMetadata,
}

impl LearnedPromptPair {
    /// Zero-mean Gaussian initialization (std 0.02).
    pub fn init(prompt_length: usize, token_width: usize, seed: u64) -> Result<Self> {
        if prompt_length == 0 || token_width == 0 {
            return Err(Error::config("prompt dimensions must be positive"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).unwrap();
        let mut make = || {
            Array2::from_shape_fn((prompt_length, token_width), |_| {
                normal.sample(&mut rng) as f32
            })
        };
        let positive = make();
        let negative = make();
        Ok(LearnedPromptPair {
            positive,
            negative,
            metadata: PromptMetadata {
                format_version: PROMPT_FORMAT_VERSION,
                prompt_length,
                token_width,
                encoder: String::new(),
                steps: 0,
                seed,
            },
        })
    }

    pub fn swapped(&self) -> Self {
        LearnedPromptPair {
            positive: self.negative.clone(),
            negative: self.positive.clone(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut archive = TensorArchive::new();
        archive.insert("prompt.positive", self.positive.clone().into_dyn());
        archive.insert("prompt.negative", self.negative.clone().into_dyn());
        archive.write(path)?;
        write_sidecar(path, &self.metadata)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = TensorArchive::read(path)?;
        let metadata: PromptMetadata = read_sidecar(path)?;
        if metadata.format_version != PROMPT_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported prompt format version {}",
                metadata.format_version
            )));
        }
        let get = |name: &str| -> Result<Array2<f32>> {
            archive
                .require(name)?
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|_| Error::invalid_state(format!("{name} is not a matrix")))
        };
        let positive = get("prompt.positive")?;
        let negative = get("prompt.negative")?;
        if positive.dim() != negative.dim() {
            return Err(Error::invalid_state("prompt matrices differ in shape"));
        }
        Ok(LearnedPromptPair {
            positive,
            negative,
            metadata,
        })
    }
}

/// Embeds both prompts on a scratch tape, returning plain vectors.
pub fn embed_prompt_values<F: Scalar>(
    prompts: &LearnedPromptPair,
    enc: &dyn ImageTextEncoder<F>,
) -> Result<(Vec<F>, Vec<F>)> {
    let mut t = Tape::<F>::new();
    let p = t.leaf(cast2::<F>(&prompts.positive));
    let n = t.leaf(cast2::<F>(&prompts.negative));
    let ep = enc.encode_prompt(&mut t, p)?;
    let en = enc.encode_prompt(&mut t, n)?;
    Ok((
        t.value(ep).iter().cloned().collect(),
        t.value(en).iter().cloned().collect(),
    ))
}

fn cast2<F: Scalar>(a: &Array2<f32>) -> ArrayD<F> {
    a.mapv(|v| F::from_f64(v as f64)).into_dyn()
}

/// Pair loss on embedding nodes. `yhat` estimates P(subsampled); the
/// pooled image carries label 0 and the subsampled image label 1; the two
/// cross-entropy terms are summed.
pub fn prompt_init_loss_node<F: Scalar>(
    t: &mut Tape<F>,
    pooled_embed: Var,
    subsampled_embed: Var,
    pos_prompt_embed: Var,
    neg_prompt_embed: Var,
) -> Var {
    // label 0: the pooled image should match the positive prompt
    let term_p = match_positive_loss_node(t, pooled_embed, pos_prompt_embed, neg_prompt_embed);
    // label 1: the subsampled image should match the negative prompt
    let term_n =
        match_positive_loss_node(t, subsampled_embed, neg_prompt_embed, pos_prompt_embed);
    t.add(term_p, term_n)
}

/// Value form of the stage-1 pair loss.
pub fn prompt_init_loss(
    pair: &SamplePair,
    prompts: &LearnedPromptPair,
    enc: &EncoderHandle<f32>,
) -> Result<LossValue> {
    let mut t = Tape::<f32>::new();
    let ip = t.leaf(cast_image::<f32>(&pair.positive));
    let i_n = t.leaf(cast_image::<f32>(&pair.negative));
    let ep = enc.encode_image(&mut t, ip)?;
    let en = enc.encode_image(&mut t, i_n)?;
    let pp = t.leaf(cast2::<f32>(&prompts.positive));
    let pn = t.leaf(cast2::<f32>(&prompts.negative));
    let epp = enc.encode_prompt(&mut t, pp)?;
    let epn = enc.encode_prompt(&mut t, pn)?;
    let loss = prompt_init_loss_node(&mut t, ep, en, epp, epn);
    LossValue::new(t.scalar_value(loss))
}

/// Stage-2 prior loss: cross-entropy of the head with the "positive
/// prompt" target. Gradients flow to the enhanced image.
pub fn prior_loss(
    enhanced: &ImageTensor,
    prompts: &LearnedPromptPair,
    enc: &EncoderHandle<f32>,
) -> Result<LossValue> {
    let mut t = Tape::<f32>::new();
    let iv = t.leaf(cast_image::<f32>(enhanced));
    let e = enc.encode_image(&mut t, iv)?;
    let pp = t.leaf(cast2::<f32>(&prompts.positive));
    let pn = t.leaf(cast2::<f32>(&prompts.negative));
    let epp = enc.encode_prompt(&mut t, pp)?;
    let epn = enc.encode_prompt(&mut t, pn)?;
    let loss = match_positive_loss_node(&mut t, e, epp, epn);
    LossValue::new(t.scalar_value(loss))
}

/// Stage-1 training settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PromptTrainConfig {
    pub steps: usize,
    pub lr: f32,
    pub batch_pairs: usize,
    /// Square crop side; must be divisible by `pool_factor`.
    pub crop_size: usize,
    pub pool_factor: usize,
    pub prompt_length: usize,
    pub holdout_fraction: f32,
    pub seed: u64,
    pub augment: AugmentationConfig,
}

impl Default for PromptTrainConfig {
    fn default() -> Self {
        PromptTrainConfig {
            steps: 5000,
            lr: 1e-3,
            batch_pairs: 8,
            crop_size: 896,
            pool_factor: 4,
            prompt_length: 16,
            holdout_fraction: 0.2,
            seed: 0,
            augment: AugmentationConfig::default(),
        }
    }
}

impl PromptTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        if self.steps == 0 || self.batch_pairs == 0 || self.prompt_length == 0 {
            return Err(Error::config("steps, batch and prompt length must be positive"));
        }
        if self.pool_factor == 0 || !self.crop_size.is_multiple_of(self.pool_factor) {
            return Err(Error::config(
                "crop size must be divisible by the pooling factor",
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout fraction must lie in [0, 1)"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PromptTrainOutcome {
    pub prompts: LearnedPromptPair,
    pub loss_history: Vec<f32>,
    /// Held-out pooled/subsampled discrimination accuracy, when a
    /// holdout split was possible.
    pub holdout_accuracy: Option<f32>,
}

/// Upscales so both sides reach `crop`, then takes a random crop.
fn random_crop<R: Rng>(image: &ImageTensor, crop: usize, rng: &mut R) -> Result<ImageTensor> {
    let mut src = image.clone();
    if src.height() < crop || src.width() < crop {
        let scale = (crop as f64 / src.height() as f64)
            .max(crop as f64 / src.width() as f64);
        let nh = (src.height() as f64 * scale).ceil() as usize;
        let nw = (src.width() as f64 * scale).ceil() as usize;
        src = src.resize(nh.max(crop), nw.max(crop))?;
    }
    let oy = if src.height() == crop {
        0
    } else {
        rng.gen_range(0..=src.height() - crop)
    };
    let ox = if src.width() == crop {
        0
    } else {
        rng.gen_range(0..=src.width() - crop)
    };
    let data = src
        .data()
        .slice_axis(Axis(0), Slice::from(oy..oy + crop))
        .slice_axis(Axis(1), Slice::from(ox..ox + crop))
        .to_owned();
    ImageTensor::new(data)
}

/// Deterministic center crop used for held-out evaluation.
fn center_crop(image: &ImageTensor, crop: usize) -> Result<ImageTensor> {
    let mut src = image.clone();
    if src.height() < crop || src.width() < crop {
        let scale = (crop as f64 / src.height() as f64)
            .max(crop as f64 / src.width() as f64);
        let nh = (src.height() as f64 * scale).ceil() as usize;
        let nw = (src.width() as f64 * scale).ceil() as usize;
        src = src.resize(nh.max(crop), nw.max(crop))?;
    }
    let oy = (src.height() - crop) / 2;
    let ox = (src.width() - crop) / 2;
    let data = src
        .data()
        .slice_axis(Axis(0), Slice::from(oy..oy + crop))
        .slice_axis(Axis(1), Slice::from(ox..ox + crop))
        .to_owned();
    ImageTensor::new(data)
}

/// P(subsampled) for an already-computed image embedding.
fn yhat_negative(img: &[f32], pos: &[f32], neg: &[f32]) -> Result<f32> {
    crate::vlm::binary_similarity(img, neg, pos)
}

/// Trains the prompt pair with Adam on the pair cross-entropy over
/// random augmented crops. Returns the trained pair, the per-step loss
/// history and the held-out discrimination accuracy.
pub fn train_prompts(
    corpus: &[ImageTensor],
    cfg: &PromptTrainConfig,
    enc: &EncoderHandle<f32>,
) -> Result<PromptTrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::config("prompt training corpus is empty"));
    }
    let holdout_len = ((corpus.len() as f32 * cfg.holdout_fraction).floor() as usize)
        .min(corpus.len().saturating_sub(1));
    let (train_set, holdout) = corpus.split_at(corpus.len() - holdout_len);

    let width = enc.prompt_token_width();
    let mut prompts = LearnedPromptPair::init(cfg.prompt_length, width, cfg.seed)?;
    prompts.metadata.encoder = enc.name();

    let shapes = vec![
        prompts.positive.shape().to_vec(),
        prompts.negative.shape().to_vec(),
    ];
    let mut opt = Adam::new(cfg.lr, 0.0, &shapes);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut loss_history = Vec::with_capacity(cfg.steps);

    for _ in 0..cfg.steps {
        // sample and embed the batch outside the prompt tape so the
        // backward sweep never descends into the image encoder
        let mut embeds = Vec::with_capacity(cfg.batch_pairs);
        for _ in 0..cfg.batch_pairs {
            let img = &train_set[rng.gen_range(0..train_set.len())];
            let crop = random_crop(img, cfg.crop_size, &mut rng)?;
            let augmented = photometric_augment_with(&crop, &cfg.augment, &mut rng)?;
            let pair = make_sample_pair(&augmented, cfg.pool_factor)?;
            let ep = embed_image_values::<f32>(enc.as_ref(), &pair.positive)?;
            let en = embed_image_values::<f32>(enc.as_ref(), &pair.negative)?;
            embeds.push((ep, en));
        }

        let mut t = Tape::<f32>::new();
        let pv = t.leaf(cast2::<f32>(&prompts.positive));
        let nv = t.leaf(cast2::<f32>(&prompts.negative));
        let epp = enc.encode_prompt(&mut t, pv)?;
        let epn = enc.encode_prompt(&mut t, nv)?;
        let mut terms = Vec::with_capacity(embeds.len());
        for (ep, en) in &embeds {
            let ev_p = t.leaf(ArrayD::from_shape_vec(ndarray::IxDyn(&[ep.len()]), ep.clone()).unwrap());
            let ev_n = t.leaf(ArrayD::from_shape_vec(ndarray::IxDyn(&[en.len()]), en.clone()).unwrap());
            terms.push(prompt_init_loss_node(&mut t, ev_p, ev_n, epp, epn));
        }
        let total = t.add_n(&terms);
        let loss = t.affine(total, 1.0 / terms.len() as f32, 0.0);
        let value = t.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::invalid_state("non-finite prompt-training loss"));
        }
        loss_history.push(value);

        let grads = t.backward(loss);
        let g = vec![grads.wrt(pv).cloned(), grads.wrt(nv).cloned()];
        let mut params = vec![
            prompts.positive.clone().into_dyn(),
            prompts.negative.clone().into_dyn(),
        ];
        opt.step(&mut params, &g)?;
        prompts.positive = params[0]
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        prompts.negative = params[1]
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
    }
    prompts.metadata.steps = cfg.steps;

    let holdout_accuracy = if holdout.is_empty() {
        None
    } else {
        Some(evaluate_prompts(holdout, &prompts, enc, cfg)?)
    };

    Ok(PromptTrainOutcome {
        prompts,
        loss_history,
        holdout_accuracy,
    })
}

/// Classifies pooled/subsampled center crops by thresholding
/// P(subsampled) at 0.5; returns the accuracy over both pair members.
pub fn evaluate_prompts(
    images: &[ImageTensor],
    prompts: &LearnedPromptPair,
    enc: &EncoderHandle<f32>,
    cfg: &PromptTrainConfig,
) -> Result<f32> {
    if images.is_empty() {
        return Err(Error::invalid_argument("no images to evaluate"));
    }
    let (pos_emb, neg_emb) = embed_prompt_values::<f32>(prompts, enc.as_ref())?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for img in images {
        let crop = center_crop(img, cfg.crop_size)?;
        let pair = make_sample_pair(&crop, cfg.pool_factor)?;
        let ep = embed_image_values::<f32>(enc.as_ref(), &pair.positive)?;
        let en = embed_image_values::<f32>(enc.as_ref(), &pair.negative)?;
        if yhat_negative(&ep, &pos_emb, &neg_emb)? < 0.5 {
            correct += 1;
        }
        if yhat_negative(&en, &pos_emb, &neg_emb)? > 0.5 {
            correct += 1;
        }
        total += 2;
    }
    Ok(correct as f32 / total as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vlm::stub::{StubEncoder, StubVariant};
    use crate::vlm::{binary_cross_entropy, build_encoder, EncoderConfig};
    use ndarray::Array3;
    use std::sync::Arc;

    fn stub(dim: usize) -> EncoderHandle<f32> {
        Arc::new(StubEncoder::new(StubVariant::Projection, dim).unwrap())
    }

    fn constant_stub(dim: usize) -> EncoderHandle<f32> {
        Arc::new(StubEncoder::new(StubVariant::Constant, dim).unwrap())
    }

    #[test]
    fn identity_augmentation_returns_input() {
        let img = ImageTensor::new(Array3::from_shape_fn((6, 7, 3), |(y, x, c)| {
            ((y * 11 + x * 3 + c) % 10) as f32 / 10.0
        }))
        .unwrap();
        let out = photometric_augment(&img, &AugmentationConfig::identity()).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn augmentation_is_reproducible_per_seed() {
        let img = ImageTensor::new(Array3::from_shape_fn((8, 8, 3), |(y, x, c)| {
            ((y * 5 + x * 7 + c * 2) % 11) as f32 / 11.0
        }))
        .unwrap();
        let cfg = AugmentationConfig {
            seed: 42,
            ..AugmentationConfig::default()
        };
        assert_eq!(
            photometric_augment(&img, &cfg).unwrap(),
            photometric_augment(&img, &cfg).unwrap()
        );
    }

    #[test]
    fn brightness_scaling_golden() {
        let img = ImageTensor::constant(4, 4, 0.8).unwrap();
        let cfg = AugmentationConfig {
            brightness: (0.5, 0.5),
            contrast: (1.0, 1.0),
            hue_shift: (0.0, 0.0),
            seed: 1,
        };
        let out = photometric_augment(&img, &cfg).unwrap();
        assert!((out.data()[(0, 0, 0)] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let cfg = AugmentationConfig {
            brightness: (1.5, 0.3),
            ..AugmentationConfig::default()
        };
        assert!(matches!(
            photometric_augment(&ImageTensor::constant(2, 2, 0.5).unwrap(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sample_pair_of_constant_image() {
        let img = ImageTensor::constant(8, 8, 0.42).unwrap();
        let pair = make_sample_pair(&img, 4).unwrap();
        assert_eq!(pair.positive.height(), 2);
        assert_eq!(pair.negative.height(), 2);
        for v in pair.positive.data().iter().chain(pair.negative.data().iter()) {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_pair_hot_pixel() {
        // one hot pixel in a 4x4 block: pooled sees 1/16, subsampling
        // sees it only at offset 0
        let mut a = Array3::<f32>::zeros((4, 4, 3));
        a[(0, 0, 0)] = 1.0;
        let pair = make_sample_pair(&ImageTensor::new(a).unwrap(), 4).unwrap();
        assert!((pair.positive.data()[(0, 0, 0)] - 1.0 / 16.0).abs() < 1e-6);
        assert_eq!(pair.negative.data()[(0, 0, 0)], 1.0);

        let mut b = Array3::<f32>::zeros((4, 4, 3));
        b[(1, 2, 0)] = 1.0;
        let pair = make_sample_pair(&ImageTensor::new(b).unwrap(), 4).unwrap();
        assert_eq!(pair.negative.data()[(0, 0, 0)], 0.0);
    }

    #[test]
    fn indivisible_crop_is_invalid_argument() {
        let img = ImageTensor::constant(6, 8, 0.5).unwrap();
        assert!(matches!(
            make_sample_pair(&img, 4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn noise_statistics_of_sample_pair() {
        // additive sigma=0.05 noise on a constant 0.5 image: pooled
        // variance ~ sigma^2/16, subsampled ~ sigma^2 (10% tolerance,
        // 1e4 draws)
        let sigma = 0.05f64;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut pos_m2 = 0.0f64;
        let mut neg_m2 = 0.0f64;
        let mut pos_n = 0usize;
        let mut neg_n = 0usize;
        for _ in 0..10_000 {
            let img = ImageTensor::new(Array3::from_shape_fn((8, 8, 3), |_| {
                (0.5 + normal.sample(&mut rng)) as f32
            }))
            .unwrap();
            let pair = make_sample_pair(&img, 4).unwrap();
            for &v in pair.positive.data().iter() {
                pos_m2 += (v as f64 - 0.5).powi(2);
                pos_n += 1;
            }
            for &v in pair.negative.data().iter() {
                neg_m2 += (v as f64 - 0.5).powi(2);
                neg_n += 1;
            }
        }
        let pos_var = pos_m2 / pos_n as f64;
        let neg_var = neg_m2 / neg_n as f64;
        let s2 = sigma * sigma;
        assert!((pos_var - s2 / 16.0).abs() < 0.1 * s2 / 16.0, "pooled {pos_var}");
        assert!((neg_var - s2).abs() < 0.1 * s2, "subsampled {neg_var}");
    }

    #[test]
    fn collapsed_prompts_give_two_ln_two() {
        let enc = constant_stub(32);
        let img = ImageTensor::constant(8, 8, 0.4).unwrap();
        let pair = make_sample_pair(&img, 4).unwrap();
        let prompts = LearnedPromptPair::init(4, 512, 0).unwrap();
        let loss = prompt_init_loss(&pair, &prompts, &enc).unwrap();
        assert!((loss.value() - 2.0 * std::f32::consts::LN_2).abs() < 1e-4);
    }

    #[test]
    fn bce_plugin_value() {
        assert!(
            (binary_cross_entropy(1.0, 0.9).unwrap() - 0.105_360_5).abs() < 1e-6
        );
    }

    #[test]
    fn loss_decreases_as_negative_yhat_rises() {
        // rigged embeddings: rotating the subsampled image toward the
        // negative prompt must lower the pair loss
        let mut t = Tape::<f32>::new();
        let pos_p = t.leaf(ndarray::arr1(&[1.0f32, 0.0]).into_dyn());
        let neg_p = t.leaf(ndarray::arr1(&[-1.0f32, 0.0]).into_dyn());
        let pooled = t.leaf(ndarray::arr1(&[1.0f32, 0.0]).into_dyn());
        let mut prev = f32::INFINITY;
        for k in 0..5 {
            let ang = std::f32::consts::FRAC_PI_2 * (1.0 - k as f32 / 4.0);
            let sub = t.leaf(ndarray::arr1(&[-ang.cos(), ang.sin()]).into_dyn());
            let loss = prompt_init_loss_node(&mut t, pooled, sub, pos_p, neg_p);
            let v = t.scalar_value(loss);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn swapping_prompts_equals_flipping_labels() {
        let enc = stub(64);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let img = ImageTensor::new(Array3::from_shape_fn((16, 16, 3), |_| {
            rng.gen_range(0.0..1.0f32)
        }))
        .unwrap();
        let pair = make_sample_pair(&img, 4).unwrap();
        let prompts = LearnedPromptPair::init(4, 512, 3).unwrap();
        let swapped = prompts.swapped();
        // flip labels = feed (negative, positive) images instead
        let flipped_pair = SamplePair {
            positive: pair.negative.clone(),
            negative: pair.positive.clone(),
            source_id: String::new(),
        };
        let a = prompt_init_loss(&pair, &swapped, &enc).unwrap();
        let b = prompt_init_loss(&flipped_pair, &prompts, &enc).unwrap();
        assert!((a.value() - b.value()).abs() < 1e-5);
    }

    #[test]
    fn prior_loss_golden_values() {
        // equal cosines -> ln 2
        let enc = constant_stub(16);
        let img = ImageTensor::constant(8, 8, 0.5).unwrap();
        let prompts = LearnedPromptPair::init(2, 512, 0).unwrap();
        let l = prior_loss(&img, &prompts, &enc).unwrap();
        assert!((l.value() - std::f32::consts::LN_2).abs() < 1e-4);

        // cos=(1,-1) -> -ln(e/(e+1/e)) on rigged embedding nodes
        let mut t = Tape::<f32>::new();
        let e = t.leaf(ndarray::arr1(&[1.0f32, 0.0]).into_dyn());
        let p = t.leaf(ndarray::arr1(&[1.0f32, 0.0]).into_dyn());
        let n = t.leaf(ndarray::arr1(&[-1.0f32, 0.0]).into_dyn());
        let loss = match_positive_loss_node(&mut t, e, p, n);
        assert!((t.scalar_value(loss) - 0.126_928).abs() < 1e-5);
    }

    #[test]
    fn constant_encoder_leaves_prompts_at_initialization() {
        let enc = constant_stub(16);
        let corpus: Vec<ImageTensor> = (0..4)
            .map(|i| ImageTensor::constant(16, 16, 0.1 + 0.05 * i as f32).unwrap())
            .collect();
        let cfg = PromptTrainConfig {
            steps: 5,
            batch_pairs: 2,
            crop_size: 16,
            prompt_length: 3,
            holdout_fraction: 0.0,
            ..PromptTrainConfig::default()
        };
        let out = train_prompts(&corpus, &cfg, &enc).unwrap();
        let init = LearnedPromptPair::init(3, enc.prompt_token_width(), cfg.seed).unwrap();
        assert_eq!(out.prompts.positive, init.positive);
        assert_eq!(out.prompts.negative, init.negative);
    }

    #[test]
    fn empty_corpus_is_config_error() {
        let enc = stub(16);
        assert!(matches!(
            train_prompts(&[], &PromptTrainConfig::default(), &enc),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_reduces_loss_with_synthetic_encoder() {
        let enc = build_encoder::<f32>(&EncoderConfig {
            kind: "stub-synthetic".into(),
            embed_dim: 64,
            ..EncoderConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let corpus: Vec<ImageTensor> = (0..24)
            .map(|_| {
                let base = rng.gen_range(0.05..0.25f32);
                ImageTensor::new(Array3::from_shape_fn((32, 32, 3), |_| {
                    (base + rng.gen_range(-0.1..0.1f32)).clamp(0.0, 1.0)
                }))
                .unwrap()
            })
            .collect();
        let cfg = PromptTrainConfig {
            steps: 120,
            lr: 5e-2,
            batch_pairs: 4,
            crop_size: 32,
            pool_factor: 4,
            prompt_length: 4,
            holdout_fraction: 0.25,
            seed: 7,
            augment: AugmentationConfig::default(),
        };
        let out = train_prompts(&corpus, &cfg, &enc).unwrap();
        let k = cfg.steps / 10;
        let first: f32 =
            out.loss_history[..k].iter().sum::<f32>() / k as f32;
        let last: f32 = out.loss_history[cfg.steps - k..].iter().sum::<f32>() / k as f32;
        assert!(
            last < first,
            "final mean {last} should be below initial mean {first}"
        );
    }

    #[test]
    fn prompt_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.ntar");
        let mut pair = LearnedPromptPair::init(5, 32, 11).unwrap();
        pair.metadata.encoder = "stub-d32".into();
        pair.metadata.steps = 99;
        pair.save(&path).unwrap();
        let back = LearnedPromptPair::load(&path).unwrap();
        assert_eq!(pair, back);
    }

    #[test]
    fn prior_loss_gradient_reaches_enhanced_pixels() {
        use nocturne_autograd::gradcheck::{
            assert_gradients_match, sample_coords, GradCheckConfig,
        };
        let enc = StubEncoder::new(StubVariant::Projection, 32).unwrap();
        let prompts = LearnedPromptPair::init(3, 512, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let x0 = ArrayD::from_shape_fn(ndarray::IxDyn(&[12, 12, 3]), |_| {
            rng.gen_range(0.05..0.95)
        });
        let eval = |x: &ArrayD<f64>| -> (f64, Option<ArrayD<f64>>) {
            let mut t = Tape::<f64>::new();
            let iv = t.leaf(x.clone());
            let e = <StubEncoder as ImageTextEncoder<f64>>::encode_image(&enc, &mut t, iv)
                .unwrap();
            let pp = t.leaf(prompts.positive.mapv(|v| v as f64).into_dyn());
            let pn = t.leaf(prompts.negative.mapv(|v| v as f64).into_dyn());
            let epp = <StubEncoder as ImageTextEncoder<f64>>::encode_prompt(&enc, &mut t, pp)
                .unwrap();
            let epn = <StubEncoder as ImageTextEncoder<f64>>::encode_prompt(&enc, &mut t, pn)
                .unwrap();
            let loss = match_positive_loss_node(&mut t, e, epp, epn);
            let v = t.scalar_value(loss);
            let g = t.backward(loss);
            (v, g.wrt(iv).cloned())
        };
        let (_, grad) = eval(&x0);
        let analytic = grad.unwrap();
        let mut f = |x: &ArrayD<f64>| eval(x).0;
        let coords = sample_coords(x0.len(), 40, &mut rng);
        let cfg = GradCheckConfig::default().with_rel_tol(1e-2);
        assert_gradients_match(&mut f, &x0, &analytic, &coords, &cfg);
    }
}
