//! A CLIP-style two-tower transformer encoder.
//!
//! Vision tower: patch-embedding convolution, class token, pre-norm
//! transformer blocks with quick-GELU MLPs, final layer norm and a
//! projection to the shared embedding space. Text tower: token plus
//! positional embeddings, causally masked blocks, the end-token output
//! projected into the same space. Weights are frozen; gradients flow only
//! to image pixels and prompt tokens.

pub mod tokenizer;

use std::any::{Any, TypeId};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use ndarray::{ArrayD, IxDyn};
use nocturne_autograd::{Scalar, Tape, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{read_sidecar, write_sidecar, TensorArchive};
use crate::error::{Error, Result};
use crate::vlm::{preprocess_image_node, ImageTextEncoder};

use tokenizer::{BpeTokenizer, Tokenizer};

const FORMAT_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;
const MASK_VALUE: f64 = -1e4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VisionConfig {
    pub resolution: usize,
    pub patch_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TextConfig {
    pub context_length: usize,
    pub vocab_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClipConfig {
    pub embed_dim: usize,
    pub vision: VisionConfig,
    pub text: TextConfig,
    pub image_mean: [f64; 3],
    pub image_std: [f64; 3],
}

impl Default for ClipConfig {
    /// Base-size vision transformer with 32 px patches and a 512-d
    /// shared embedding.
    fn default() -> Self {
        ClipConfig {
            embed_dim: 512,
            vision: VisionConfig {
                resolution: 224,
                patch_size: 32,
                width: 768,
                layers: 12,
                heads: 12,
            },
            text: TextConfig {
                context_length: 77,
                vocab_size: 49_408,
                width: 512,
                layers: 12,
                heads: 8,
            },
            image_mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
            image_std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
        }
    }
}

impl ClipConfig {
    /// Small configuration for tests: full architecture, tiny sizes.
    pub fn tiny() -> Self {
        ClipConfig {
            embed_dim: 32,
            vision: VisionConfig {
                resolution: 32,
                patch_size: 8,
                width: 32,
                layers: 2,
                heads: 2,
            },
            text: TextConfig {
                context_length: 24,
                vocab_size: 128,
                width: 32,
                layers: 2,
                heads: 2,
            },
            image_mean: [0.5, 0.5, 0.5],
            image_std: [0.25, 0.25, 0.25],
        }
    }

    fn validate(&self) -> Result<()> {
        let v = &self.vision;
        let t = &self.text;
        if !v.resolution.is_multiple_of(v.patch_size) {
            return Err(Error::config(
                "vision resolution must be a multiple of the patch size",
            ));
        }
        if !v.width.is_multiple_of(v.heads) || !t.width.is_multiple_of(t.heads) {
            return Err(Error::config("tower width must be divisible by head count"));
        }
        if t.vocab_size < 3 || t.context_length < 3 {
            return Err(Error::config("text tower is too small to bracket tokens"));
        }
        Ok(())
    }

    fn grid(&self) -> usize {
        self.vision.resolution / self.vision.patch_size
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClipMetadata {
    format_version: u32,
    config: ClipConfig,
}

enum Init {
    Embedding,
    Linear { fan_in: usize },
    Ones,
    Zeros,
}

fn block_specs(prefix: &str, width: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    let w = width;
    for i in [1usize, 2] {
        out.push((format!("{prefix}.ln{i}.gamma"), vec![w], Init::Ones));
        out.push((format!("{prefix}.ln{i}.beta"), vec![w], Init::Zeros));
    }
    out.push((
        format!("{prefix}.attn.qkv.weight"),
        vec![w, 3 * w],
        Init::Linear { fan_in: w },
    ));
    out.push((format!("{prefix}.attn.qkv.bias"), vec![3 * w], Init::Zeros));
    out.push((
        format!("{prefix}.attn.out.weight"),
        vec![w, w],
        Init::Linear { fan_in: w },
    ));
    out.push((format!("{prefix}.attn.out.bias"), vec![w], Init::Zeros));
    out.push((
        format!("{prefix}.mlp.fc1.weight"),
        vec![w, 4 * w],
        Init::Linear { fan_in: w },
    ));
    out.push((format!("{prefix}.mlp.fc1.bias"), vec![4 * w], Init::Zeros));
    out.push((
        format!("{prefix}.mlp.fc2.weight"),
        vec![4 * w, w],
        Init::Linear { fan_in: 4 * w },
    ));
    out.push((format!("{prefix}.mlp.fc2.bias"), vec![w], Init::Zeros));
}

fn weight_specs(cfg: &ClipConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let v = &cfg.vision;
    let t = &cfg.text;
    let grid = cfg.grid();
    out.push((
        "visual.patch_embedding.weight".into(),
        vec![v.patch_size, v.patch_size, 3, v.width],
        Init::Linear {
            fan_in: v.patch_size * v.patch_size * 3,
        },
    ));
    out.push(("visual.class_embedding".into(), vec![v.width], Init::Embedding));
    out.push((
        "visual.position_embedding".into(),
        vec![grid * grid + 1, v.width],
        Init::Embedding,
    ));
    out.push(("visual.ln_pre.gamma".into(), vec![v.width], Init::Ones));
    out.push(("visual.ln_pre.beta".into(), vec![v.width], Init::Zeros));
    for i in 0..v.layers {
        block_specs(&format!("visual.block{i}"), v.width, &mut out);
    }
    out.push(("visual.ln_post.gamma".into(), vec![v.width], Init::Ones));
    out.push(("visual.ln_post.beta".into(), vec![v.width], Init::Zeros));
    out.push((
        "visual.projection".into(),
        vec![v.width, cfg.embed_dim],
        Init::Linear { fan_in: v.width },
    ));

    out.push((
        "text.token_embedding".into(),
        vec![t.vocab_size, t.width],
        Init::Embedding,
    ));
    out.push((
        "text.position_embedding".into(),
        vec![t.context_length, t.width],
        Init::Embedding,
    ));
    for i in 0..t.layers {
        block_specs(&format!("text.block{i}"), t.width, &mut out);
    }
    out.push(("text.ln_final.gamma".into(), vec![t.width], Init::Ones));
    out.push(("text.ln_final.beta".into(), vec![t.width], Init::Zeros));
    out.push((
        "text.projection".into(),
        vec![t.width, cfg.embed_dim],
        Init::Linear { fan_in: t.width },
    ));
    out
}

type CastWeights<F> = BTreeMap<String, Arc<ArrayD<F>>>;

pub struct ClipEncoder {
    cfg: ClipConfig,
    weights: TensorArchive,
    tokenizer: Tokenizer,
    checksum: u64,
    cast_cache: Mutex<HashMap<TypeId, Arc<dyn Any + Send + Sync>>>,
}

impl ClipEncoder {
    /// Randomly initialized encoder with the hash tokenizer; used by
    /// tests and as a template for real checkpoints.
    pub fn random(cfg: ClipConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut weights = TensorArchive::new();
        for (name, shape, init) in weight_specs(&cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match init {
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
                Init::Embedding => (0..n).map(|_| sample_normal(&mut rng, 0.02)).collect(),
                Init::Linear { fan_in } => {
                    let std = (1.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| sample_normal(&mut rng, std)).collect()
                }
            };
            weights.insert(name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap());
        }
        let checksum = weights.checksum();
        let tokenizer = Tokenizer::Hash {
            vocab_size: cfg.text.vocab_size,
        };
        Ok(ClipEncoder {
            cfg,
            weights,
            tokenizer,
            checksum,
            cast_cache: Mutex::new(HashMap::new()),
        })
    }

    /// Loads weights from an archive (`<path>.json` sidecar holds the
    /// configuration). Without a merge list the word-hash tokenizer is
    /// used, which is only meaningful for randomly initialized towers.
    pub fn load(path: &Path, merges: Option<&Path>) -> Result<Self> {
        let weights = TensorArchive::read(path)?;
        let meta: ClipMetadata = read_sidecar(path)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported encoder format version {}",
                meta.format_version
            )));
        }
        let cfg = meta.config;
        cfg.validate()?;
        for (name, shape, _) in weight_specs(&cfg) {
            let arr = weights.require(&name)?;
            if arr.shape() != shape.as_slice() {
                return Err(Error::invalid_state(format!(
                    "weight `{name}` has shape {:?}, expected {:?}",
                    arr.shape(),
                    shape
                )));
            }
        }
        let tokenizer = match merges {
            Some(p) => {
                let bpe = BpeTokenizer::from_merges_file(p)?;
                if bpe.vocab_size() != cfg.text.vocab_size {
                    return Err(Error::config(format!(
                        "merge list yields a vocabulary of {}, encoder expects {}",
                        bpe.vocab_size(),
                        cfg.text.vocab_size
                    )));
                }
                Tokenizer::Bpe(Box::new(bpe))
            }
            None => Tokenizer::Hash {
                vocab_size: cfg.text.vocab_size,
            },
        };
        let checksum = weights.checksum();
        Ok(ClipEncoder {
            cfg,
            weights,
            tokenizer,
            checksum,
            cast_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.weights.write(path)?;
        write_sidecar(
            path,
            &ClipMetadata {
                format_version: FORMAT_VERSION,
                config: self.cfg.clone(),
            },
        )
    }

    pub fn config(&self) -> &ClipConfig {
        &self.cfg
    }

    fn cast<F: Scalar>(&self) -> Arc<CastWeights<F>> {
        let mut cache = self.cast_cache.lock().unwrap();
        let tid = TypeId::of::<F>();
        if let Some(hit) = cache.get(&tid) {
            return hit.clone().downcast::<CastWeights<F>>().unwrap();
        }
        let mut cast: CastWeights<F> = BTreeMap::new();
        for name in self.weights.names() {
            let arr = self.weights.get(name).unwrap();
            cast.insert(
                name.to_string(),
                Arc::new(arr.mapv(|v| F::from_f64(v as f64))),
            );
        }
        let arc = Arc::new(cast);
        cache.insert(tid, arc.clone());
        arc
    }

    fn residual_block<F: Scalar>(
        &self,
        t: &mut Tape<F>,
        x: Var,
        w: &CastWeights<F>,
        prefix: &str,
        heads: usize,
        mask: Option<&Arc<ArrayD<F>>>,
    ) -> Var {
        let get = |name: &str| w[&format!("{prefix}.{name}")].clone();
        let eps = F::from_f64(LN_EPS);
        let width = t.value(x).shape()[1];
        let dh = width / heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());

        let h = t.layer_norm_frozen(x, get("ln1.gamma"), get("ln1.beta"), eps);
        let qkv = t.matmul_frozen(h, get("attn.qkv.weight"));
        let qkv = t.add_row_frozen(qkv, get("attn.qkv.bias"));
        let mut head_outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let q = t.narrow(qkv, 1, i * dh, dh);
            let k = t.narrow(qkv, 1, width + i * dh, dh);
            let v = t.narrow(qkv, 1, 2 * width + i * dh, dh);
            let kt = t.transpose(k);
            let scores = t.matmul(q, kt);
            let scores = t.affine(scores, scale, F::zero());
            let scores = match mask {
                Some(m) => t.add_frozen(scores, m.clone()),
                None => scores,
            };
            let attn = t.softmax_rows(scores);
            head_outs.push(t.matmul(attn, v));
        }
        let merged = t.concat(1, &head_outs);
        let proj = t.matmul_frozen(merged, get("attn.out.weight"));
        let proj = t.add_row_frozen(proj, get("attn.out.bias"));
        let x = t.add(x, proj);

        let h2 = t.layer_norm_frozen(x, get("ln2.gamma"), get("ln2.beta"), eps);
        let m = t.matmul_frozen(h2, get("mlp.fc1.weight"));
        let m = t.add_row_frozen(m, get("mlp.fc1.bias"));
        let m = quick_gelu(t, m);
        let m = t.matmul_frozen(m, get("mlp.fc2.weight"));
        let m = t.add_row_frozen(m, get("mlp.fc2.bias"));
        t.add(x, m)
    }

    fn causal_mask<F: Scalar>(len: usize) -> Arc<ArrayD<F>> {
        let mut m = ArrayD::<F>::zeros(IxDyn(&[len, len]));
        for i in 0..len {
            for j in (i + 1)..len {
                m[[i, j]] = F::from_f64(MASK_VALUE);
            }
        }
        Arc::new(m)
    }

    /// Shared text-tower tail: blocks, final norm at `take` and the text
    /// projection, normalized.
    fn text_tail<F: Scalar>(
        &self,
        t: &mut Tape<F>,
        seq: Var,
        w: &CastWeights<F>,
        take: usize,
    ) -> Var {
        let len = t.value(seq).shape()[0];
        let mask = Self::causal_mask::<F>(len);
        let mut x = seq;
        for i in 0..self.cfg.text.layers {
            x = self.residual_block(
                t,
                x,
                w,
                &format!("text.block{i}"),
                self.cfg.text.heads,
                Some(&mask),
            );
        }
        let row = t.narrow(x, 0, take, 1);
        let eps = F::from_f64(LN_EPS);
        let row = t.layer_norm_frozen(
            row,
            w["text.ln_final.gamma"].clone(),
            w["text.ln_final.beta"].clone(),
            eps,
        );
        let proj = t.matmul_frozen(row, w["text.projection"].clone());
        let vec = t.reshape(proj, &[self.cfg.embed_dim]);
        t.l2_normalize(vec, F::from_f64(1e-12))
    }

    fn positions<F: Scalar>(&self, w: &CastWeights<F>, len: usize) -> Arc<ArrayD<F>> {
        let pos = &w["text.position_embedding"];
        Arc::new(
            pos.slice_axis(ndarray::Axis(0), ndarray::Slice::from(0..len))
                .to_owned(),
        )
    }
}

fn sample_normal(rng: &mut ChaCha20Rng, std: f64) -> f32 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std) as f32
}

fn quick_gelu<F: Scalar>(t: &mut Tape<F>, x: Var) -> Var {
    let gate = t.affine(x, F::from_f64(1.702), F::zero());
    let sig = t.sigmoid(gate);
    t.mul(x, sig)
}

impl<F: Scalar> ImageTextEncoder<F> for ClipEncoder {
    fn name(&self) -> String {
        format!(
            "clip-v{}x{}-d{}",
            self.cfg.vision.width, self.cfg.vision.layers, self.cfg.embed_dim
        )
    }

    fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn input_resolution(&self) -> usize {
        self.cfg.vision.resolution
    }

    fn prompt_token_width(&self) -> usize {
        self.cfg.text.width
    }

    fn encode_image(&self, t: &mut Tape<F>, image: Var) -> Result<Var> {
        let shape = t.value(image).shape().to_vec();
        if shape.len() != 3 || shape[2] != 3 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::invalid_argument(format!(
                "encoder expects a non-degenerate [H, W, 3] image, got {shape:?}"
            )));
        }
        let w = self.cast::<F>();
        let v = &self.cfg.vision;
        let pre = preprocess_image_node(
            t,
            image,
            v.resolution,
            self.cfg.image_mean,
            self.cfg.image_std,
        );
        let patches = t.conv2d_frozen(
            pre,
            w["visual.patch_embedding.weight"].clone(),
            None,
            v.patch_size,
            0,
        );
        let grid = self.cfg.grid();
        let tokens = t.reshape(patches, &[grid * grid, v.width]);
        let cls = t.leaf(
            w["visual.class_embedding"]
                .as_ref()
                .clone()
                .into_shape_with_order(IxDyn(&[1, v.width]))
                .unwrap(),
        );
        let seq = t.concat(0, &[cls, tokens]);
        let seq = t.add_frozen(seq, w["visual.position_embedding"].clone());
        let eps = F::from_f64(LN_EPS);
        let mut x = t.layer_norm_frozen(
            seq,
            w["visual.ln_pre.gamma"].clone(),
            w["visual.ln_pre.beta"].clone(),
            eps,
        );
        for i in 0..v.layers {
            x = self.residual_block(t, x, &w, &format!("visual.block{i}"), v.heads, None);
        }
        let cls_out = t.narrow(x, 0, 0, 1);
        let cls_out = t.layer_norm_frozen(
            cls_out,
            w["visual.ln_post.gamma"].clone(),
            w["visual.ln_post.beta"].clone(),
            eps,
        );
        let proj = t.matmul_frozen(cls_out, w["visual.projection"].clone());
        let vec = t.reshape(proj, &[self.cfg.embed_dim]);
        Ok(t.l2_normalize(vec, F::from_f64(1e-12)))
    }

    fn encode_text(&self, t: &mut Tape<F>, text: &str) -> Result<Var> {
        let ids = self.tokenizer.encode(
            text,
            self.cfg.text.vocab_size,
            self.cfg.text.context_length,
        )?;
        let w = self.cast::<F>();
        let x = t.gather_rows_frozen(w["text.token_embedding"].as_ref(), &ids);
        let x = t.add_frozen(x, self.positions(&w, ids.len()));
        Ok(self.text_tail(t, x, &w, ids.len() - 1))
    }

    fn encode_prompt(&self, t: &mut Tape<F>, tokens: Var) -> Result<Var> {
        let shape = t.value(tokens).shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::invalid_argument(
                "prompt tokens must be a non-empty [N, W] matrix",
            ));
        }
        if shape[1] != self.cfg.text.width {
            return Err(Error::invalid_argument(format!(
                "prompt token width {} does not match encoder width {}",
                shape[1], self.cfg.text.width
            )));
        }
        let n = shape[0];
        if n + 2 > self.cfg.text.context_length {
            return Err(Error::invalid_argument(format!(
                "prompt length {} exceeds the context budget",
                n
            )));
        }
        let w = self.cast::<F>();
        let vocab = self.cfg.text.vocab_size;
        let table = w["text.token_embedding"].as_ref();
        let sot = t.gather_rows_frozen(table, &[vocab - 2]);
        let eot = t.gather_rows_frozen(table, &[vocab - 1]);
        let seq = t.concat(0, &[sot, tokens, eot]);
        let seq = t.add_frozen(seq, self.positions(&w, n + 2));
        Ok(self.text_tail(t, seq, &w, n + 1))
    }

    fn weight_checksum(&self) -> u64 {
        self.checksum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;
    use crate::vlm::{embed_image_values, embed_text_values};
    use ndarray::{Array2, Array3};
    use nocturne_autograd::gradcheck::{
        assert_gradients_match, sample_coords, GradCheckConfig,
    };

    fn tiny() -> ClipEncoder {
        ClipEncoder::random(ClipConfig::tiny(), 7).unwrap()
    }

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
    }

    fn test_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        ImageTensor::new(Array3::from_shape_fn((40, 28, 3), |_| {
            rng.gen_range(0.0..1.0f32)
        }))
        .unwrap()
    }

    #[test]
    fn image_embedding_unit_norm_and_deterministic() {
        let enc = tiny();
        let img = test_image(1);
        let a = embed_image_values::<f32>(&enc, &img).unwrap();
        let b = embed_image_values::<f32>(&enc, &img).unwrap();
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn text_embeddings_distinct_and_normalized() {
        let enc = tiny();
        let a = embed_text_values::<f32>(&enc, "a photo of a car").unwrap();
        let b = embed_text_values::<f32>(&enc, "not a photo of a car").unwrap();
        assert!((norm(&a) - 1.0).abs() < 1e-5);
        let cos: f64 = a.iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum();
        assert!(cos < 1.0 - 1e-4);
    }

    #[test]
    fn over_length_text_is_invalid_argument() {
        let enc = tiny();
        let mut t = Tape::<f32>::new();
        let long = "word ".repeat(40);
        assert!(matches!(
            <ClipEncoder as ImageTextEncoder<f32>>::encode_text(&enc, &mut t, &long),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn prompt_embedding_feels_prompt_gradients() {
        let enc = tiny();
        let mut t = Tape::<f64>::new();
        let tokens = t.leaf(
            Array2::from_shape_fn((4, 32), |(i, j)| ((i * 32 + j) as f64 * 0.01).sin())
                .into_dyn(),
        );
        let e = <ClipEncoder as ImageTextEncoder<f64>>::encode_prompt(&enc, &mut t, tokens)
            .unwrap();
        let s = t.sum(e);
        let g = t.backward(s);
        let grad = g.wrt(tokens).expect("prompt gradient must exist");
        assert!(grad.iter().any(|&v| v.abs() > 0.0));
    }

    #[test]
    fn prompt_gradient_matches_finite_differences() {
        let enc = tiny();
        let x0 = Array2::from_shape_fn((3, 32), |(i, j)| {
            ((i * 32 + j) as f64 * 0.37).sin() * 0.1
        })
        .into_dyn();
        let target: Vec<f64> = (0..32).map(|i| ((i * 7 + 3) as f64).sin()).collect();
        let tn = {
            let n = target.iter().map(|v| v * v).sum::<f64>().sqrt();
            target.iter().map(|v| v / n).collect::<Vec<_>>()
        };
        let eval = |x: &ArrayD<f64>| -> (f64, Option<ArrayD<f64>>) {
            let mut t = Tape::<f64>::new();
            let tok = t.leaf(x.clone());
            let e = <ClipEncoder as ImageTextEncoder<f64>>::encode_prompt(&enc, &mut t, tok)
                .unwrap();
            let tv = crate::vlm::leaf_from_f64(&mut t, &[32], &tn);
            let c = t.dot(e, tv);
            let v = t.scalar_value(c);
            let g = t.backward(c);
            (v, g.wrt(tok).cloned())
        };
        let (_, grad) = eval(&x0);
        let analytic = grad.unwrap();
        let mut f = |x: &ArrayD<f64>| eval(x).0;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let coords = sample_coords(x0.len(), 30, &mut rng);
        let cfg = GradCheckConfig::default().with_rel_tol(1e-2);
        assert_gradients_match(&mut f, &x0, &analytic, &coords, &cfg);
    }

    #[test]
    fn save_load_round_trip_preserves_embeddings_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ntar");
        let enc = tiny();
        enc.save(&path).unwrap();
        let back = ClipEncoder::load(&path, None).unwrap();
        assert_eq!(
            <ClipEncoder as ImageTextEncoder<f32>>::weight_checksum(&enc),
            <ClipEncoder as ImageTextEncoder<f32>>::weight_checksum(&back)
        );
        let img = test_image(2);
        assert_eq!(
            embed_image_values::<f32>(&enc, &img).unwrap(),
            embed_image_values::<f32>(&back, &img).unwrap()
        );
    }

    #[test]
    fn default_config_matches_reference_dimensions() {
        let cfg = ClipConfig::default();
        assert_eq!(cfg.embed_dim, 512);
        assert_eq!(cfg.vision.resolution, 224);
        assert_eq!(cfg.grid(), 7);
        assert_eq!(cfg.text.context_length, 77);
        assert_eq!(cfg.text.vocab_size, 49_408);
    }
}
