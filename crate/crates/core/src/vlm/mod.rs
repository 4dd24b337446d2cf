//! Narrow interface over a frozen contrastive image/text encoder,
//! exposing image embedding, text and learned-prompt embedding, and the
//! shared softmax-over-cosine-similarity head.

pub mod clip;
pub mod stub;

use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use nocturne_autograd::{Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// A frozen two-tower encoder. All methods record differentiable
/// operations on the caller's tape: gradients flow to image pixels and
/// prompt tokens, never to encoder weights.
pub trait ImageTextEncoder<F: Scalar>: Send + Sync {
    /// Stable identifier recorded in checkpoints.
    fn name(&self) -> String;
    fn embed_dim(&self) -> usize;
    fn input_resolution(&self) -> usize;
    /// Token embedding width expected by [`Self::encode_prompt`].
    fn prompt_token_width(&self) -> usize;
    /// `[H, W, 3]` image in `[0, 1]` to a unit-norm `[D]` embedding.
    fn encode_image(&self, t: &mut Tape<F>, image: Var) -> Result<Var>;
    /// Tokenized text to a unit-norm `[D]` embedding.
    fn encode_text(&self, t: &mut Tape<F>, text: &str) -> Result<Var>;
    /// Continuous `[N, W]` prompt-token matrix to a unit-norm `[D]`
    /// embedding; the tokens are bracketed by start/end sentinels.
    fn encode_prompt(&self, t: &mut Tape<F>, tokens: Var) -> Result<Var>;
    /// Hash of the frozen weights; must never change during a run.
    fn weight_checksum(&self) -> u64;
}

/// Shared, immutable encoder handle.
pub type EncoderHandle<F> = Arc<dyn ImageTextEncoder<F>>;

/// Encoder selection, read from config files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    /// `stub`, `stub-synthetic`, `stub-constant` or `clip`.
    pub kind: String,
    /// Embedding dimension for the stub variants.
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    /// Weight archive for the `clip` kind.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Byte-pair merge list for the `clip` text tokenizer.
    #[serde(default)]
    pub tokenizer_merges: Option<PathBuf>,
}

fn default_embed_dim() -> usize {
    512
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: "stub".into(),
            embed_dim: default_embed_dim(),
            checkpoint: None,
            tokenizer_merges: None,
        }
    }
}

impl EncoderConfig {
    pub fn stub() -> Self {
        Self::default()
    }
}

/// Instantiates an encoder from config.
pub fn build_encoder<F: Scalar>(cfg: &EncoderConfig) -> Result<EncoderHandle<F>> {
    match cfg.kind.as_str() {
        "stub" => Ok(Arc::new(stub::StubEncoder::new(
            stub::StubVariant::Projection,
            cfg.embed_dim,
        )?)),
        "stub-synthetic" => Ok(Arc::new(stub::StubEncoder::new(
            stub::StubVariant::Synthetic,
            cfg.embed_dim,
        )?)),
        "stub-constant" => Ok(Arc::new(stub::StubEncoder::new(
            stub::StubVariant::Constant,
            cfg.embed_dim,
        )?)),
        "clip" => {
            let path = cfg.checkpoint.as_ref().ok_or_else(|| {
                Error::config("encoder kind `clip` requires `encoder_checkpoint`")
            })?;
            let model =
                clip::ClipEncoder::load(path, cfg.tokenizer_merges.as_deref())?;
            Ok(Arc::new(model))
        }
        other => Err(Error::config(format!("unknown encoder kind `{other}`"))),
    }
}

/// Softmax-over-cosine head: probability that `img` matches `pos` rather
/// than `neg`, computed as `exp(cos_p) / (exp(cos_p) + exp(cos_n))`.
pub fn binary_similarity(img: &[f32], pos: &[f32], neg: &[f32]) -> Result<f32> {
    if img.len() != pos.len() || img.len() != neg.len() || img.is_empty() {
        return Err(Error::invalid_argument(format!(
            "embedding dimensions differ: img {}, pos {}, neg {}",
            img.len(),
            pos.len(),
            neg.len()
        )));
    }
    let cp = cosine(img, pos);
    let cn = cosine(img, neg);
    Ok(sigmoid(cp - cn))
}

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)) as f32
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Tape version of the head on unit-norm embedding nodes. Returns the
/// 0-d probability node.
pub fn binary_similarity_node<F: Scalar>(
    t: &mut Tape<F>,
    img: Var,
    pos: Var,
    neg: Var,
) -> Var {
    let cp = t.dot(img, pos);
    let cn = t.dot(img, neg);
    let d = t.sub(cp, cn);
    t.sigmoid(d)
}

/// `-ln sigmoid(cos_pos - cos_neg)` as a stable softplus; the
/// cross-entropy of the head against the "positive" target.
pub fn head_bce_positive_node<F: Scalar>(t: &mut Tape<F>, cos_pos: Var, cos_neg: Var) -> Var {
    let d = t.sub(cos_neg, cos_pos);
    t.softplus(d)
}

/// Cross-entropy of the head for unit-norm embedding nodes, with the
/// "matches `pos`" target: `-ln yhat(img; pos, neg)`.
pub fn match_positive_loss_node<F: Scalar>(
    t: &mut Tape<F>,
    img: Var,
    pos: Var,
    neg: Var,
) -> Var {
    let cp = t.dot(img, pos);
    let cn = t.dot(img, neg);
    head_bce_positive_node(t, cp, cn)
}

/// Plain binary cross-entropy `-(y ln p + (1-y) ln(1-p))`.
pub fn binary_cross_entropy(target: f32, probability: f32) -> Result<f32> {
    if !(0.0..=1.0).contains(&target) || !(0.0..=1.0).contains(&probability) {
        return Err(Error::invalid_argument(
            "binary cross-entropy arguments must lie in [0, 1]",
        ));
    }
    let p = probability.clamp(1e-12, 1.0 - 1e-12) as f64;
    let y = target as f64;
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()) as f32)
}

/// Records an image as a constant and encodes it on a scratch tape,
/// returning the embedding values.
pub fn embed_image_values<F: Scalar>(
    enc: &dyn ImageTextEncoder<F>,
    image: &ImageTensor,
) -> Result<Vec<F>> {
    let mut t = Tape::<F>::new();
    let node = t.leaf(cast_image::<F>(image));
    let e = enc.encode_image(&mut t, node)?;
    Ok(t.value(e).iter().cloned().collect())
}

/// Encodes a text string on a scratch tape, returning embedding values.
pub fn embed_text_values<F: Scalar>(
    enc: &dyn ImageTextEncoder<F>,
    text: &str,
) -> Result<Vec<F>> {
    let mut t = Tape::<F>::new();
    let e = enc.encode_text(&mut t, text)?;
    Ok(t.value(e).iter().cloned().collect())
}

/// Differentiable encoder preprocessing: bilinear resize to the encoder
/// resolution plus per-channel normalization.
pub fn preprocess_image_node<F: Scalar>(
    t: &mut Tape<F>,
    image: Var,
    resolution: usize,
    mean: [f64; 3],
    std: [f64; 3],
) -> Var {
    let shape = t.value(image).shape().to_vec();
    let resized = if shape[0] == resolution && shape[1] == resolution {
        image
    } else {
        t.bilinear_resize(image, resolution, resolution)
    };
    let scale: Vec<F> = std.iter().map(|&s| F::from_f64(1.0 / s)).collect();
    let shift: Vec<F> = mean
        .iter()
        .zip(&std)
        .map(|(&m, &s)| F::from_f64(-m / s))
        .collect();
    t.channel_affine(resized, scale, shift)
}

pub(crate) fn cast_image<F: Scalar>(image: &ImageTensor) -> ArrayD<F> {
    image.data().mapv(|v| F::from_f64(v as f64)).into_dyn()
}

pub(crate) fn leaf_from_f64<F: Scalar>(t: &mut Tape<F>, shape: &[usize], vals: &[f64]) -> Var {
    let data: Vec<F> = vals.iter().map(|&v| F::from_f64(v)).collect();
    t.leaf(ArrayD::from_shape_vec(IxDyn(shape), data).expect("leaf shape"))
}
