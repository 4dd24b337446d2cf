//! Deterministic test-double encoders.
//!
//! `Projection` hashes nothing about the content: a fixed random
//! projection of the (resized) image or of the prompt matrix, so
//! gradients flow while results stay reproducible. `Synthetic` embeds
//! differentiable image statistics so that averaged and subsampled noisy
//! crops become linearly separable. `Constant` returns one fixed vector
//! for everything.

use std::collections::HashMap;
use std::sync::Mutex;

use nocturne_autograd::{Scalar, Tape, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::archive::fnv64;
use crate::error::{Error, Result};
use crate::vlm::{leaf_from_f64, ImageTextEncoder};

const STUB_SEED: u64 = 0x6e6f_6374_7572_6e65; // "nocturne"
const IMAGE_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubVariant {
    Projection,
    Synthetic,
    Constant,
}

impl StubVariant {
    fn tag(self) -> &'static str {
        match self {
            StubVariant::Projection => "stub",
            StubVariant::Synthetic => "stub-synthetic",
            StubVariant::Constant => "stub-constant",
        }
    }
}

/// Lazily built projection matrices keyed by prompt shape.
type ProjectionCache = Mutex<HashMap<(usize, usize), std::sync::Arc<Vec<f64>>>>;

pub struct StubEncoder {
    variant: StubVariant,
    dim: usize,
    token_width: usize,
    image_proj: Vec<f64>,
    synth_proj: Vec<f64>,
    constant: Vec<f64>,
    prompt_projs: ProjectionCache,
}

/// Number of differentiable statistics used by the synthetic variant.
const SYNTH_FEATURES: usize = 8;

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = 1.0 / (rows as f64).sqrt();
    (0..rows * cols)
        .map(|_| {
            // Box-Muller keeps this independent of distribution crates.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * scale
        })
        .collect()
}

fn unit_vector(dim: usize, seed: u64) -> Vec<f64> {
    let v = normal_matrix(dim, 1, seed);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

impl StubEncoder {
    pub fn new(variant: StubVariant, dim: usize) -> Result<Self> {
        Self::with_token_width(variant, dim, 512)
    }

    pub fn with_token_width(
        variant: StubVariant,
        dim: usize,
        token_width: usize,
    ) -> Result<Self> {
        if dim == 0 || token_width == 0 {
            return Err(Error::config("stub encoder dimensions must be positive"));
        }
        Ok(StubEncoder {
            variant,
            dim,
            token_width,
            image_proj: normal_matrix(IMAGE_SIDE * IMAGE_SIDE * 3, dim, STUB_SEED ^ 1),
            synth_proj: normal_matrix(SYNTH_FEATURES, dim, STUB_SEED ^ 2),
            constant: unit_vector(dim, STUB_SEED ^ 3),
            prompt_projs: Mutex::new(HashMap::new()),
        })
    }

    fn prompt_proj(&self, n: usize, w: usize) -> std::sync::Arc<Vec<f64>> {
        let mut cache = self.prompt_projs.lock().unwrap();
        cache
            .entry((n, w))
            .or_insert_with(|| {
                std::sync::Arc::new(normal_matrix(
                    n * w,
                    self.dim,
                    STUB_SEED ^ 4 ^ ((n as u64) << 32 | w as u64),
                ))
            })
            .clone()
    }

    fn constant_node<F: Scalar>(&self, t: &mut Tape<F>) -> Var {
        leaf_from_f64(t, &[self.dim], &self.constant)
    }

    /// Differentiable image statistics: global/channel means plus
    /// amplified first- and second-order gradient energies. The gradient
    /// energies separate averaged (denoised) from subsampled (noisy)
    /// crops.
    fn synthetic_features<F: Scalar>(&self, t: &mut Tape<F>, image: Var) -> Var {
        let ten = F::from_f64(10.0);
        let mu = t.mean(image);
        let chans = t.channel_means(image);
        let mu_r = t.element(chans, 0);
        let mu_g = t.element(chans, 1);
        let mu_b = t.element(chans, 2);
        let gray = t.channel_mean(image);
        let dx = t.forward_diff(gray, 1);
        let adx = t.abs(dx);
        let hx = t.mean(adx);
        let hx = t.affine(hx, ten, F::zero());
        let dy = t.forward_diff(gray, 0);
        let ady = t.abs(dy);
        let hy = t.mean(ady);
        let hy = t.affine(hy, ten, F::zero());
        let d2 = t.forward_diff(dx, 1);
        let ad2 = t.abs(d2);
        let h2 = t.mean(ad2);
        let h2 = t.affine(h2, ten, F::zero());
        let curvature = t.sqr(h2);
        let parts: Vec<Var> = [mu, mu_r, mu_g, mu_b, hx, hy, h2, curvature]
            .into_iter()
            .map(|v| t.reshape(v, &[1]))
            .collect();
        let vec = t.concat(0, &parts);
        t.reshape(vec, &[1, SYNTH_FEATURES])
    }
}

impl<F: Scalar> ImageTextEncoder<F> for StubEncoder {
    fn name(&self) -> String {
        format!("{}-d{}", self.variant.tag(), self.dim)
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn input_resolution(&self) -> usize {
        224
    }

    fn prompt_token_width(&self) -> usize {
        self.token_width
    }

    fn encode_image(&self, t: &mut Tape<F>, image: Var) -> Result<Var> {
        let shape = t.value(image).shape().to_vec();
        if shape.len() != 3 || shape[2] != 3 || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::invalid_argument(format!(
                "encoder expects a non-degenerate [H, W, 3] image, got {shape:?}"
            )));
        }
        match self.variant {
            StubVariant::Constant => Ok(self.constant_node(t)),
            StubVariant::Projection => {
                let small = if shape[0] == IMAGE_SIDE && shape[1] == IMAGE_SIDE {
                    image
                } else {
                    t.bilinear_resize(image, IMAGE_SIDE, IMAGE_SIDE)
                };
                let flat = t.reshape(small, &[1, IMAGE_SIDE * IMAGE_SIDE * 3]);
                let proj = leaf_from_f64(
                    t,
                    &[IMAGE_SIDE * IMAGE_SIDE * 3, self.dim],
                    &self.image_proj,
                );
                let out = t.matmul(flat, proj);
                let vec = t.reshape(out, &[self.dim]);
                Ok(t.l2_normalize(vec, F::from_f64(1e-12)))
            }
            StubVariant::Synthetic => {
                let feats = self.synthetic_features(t, image);
                let proj = leaf_from_f64(t, &[SYNTH_FEATURES, self.dim], &self.synth_proj);
                let out = t.matmul(feats, proj);
                let vec = t.reshape(out, &[self.dim]);
                Ok(t.l2_normalize(vec, F::from_f64(1e-12)))
            }
        }
    }

    fn encode_text(&self, t: &mut Tape<F>, text: &str) -> Result<Var> {
        if text.trim().is_empty() {
            return Err(Error::invalid_argument("cannot encode an empty string"));
        }
        if text.len() > 1024 {
            return Err(Error::invalid_argument("text exceeds the token budget"));
        }
        if self.variant == StubVariant::Constant {
            return Ok(self.constant_node(t));
        }
        let v = unit_vector(self.dim, STUB_SEED ^ 5 ^ fnv64(text.as_bytes()));
        Ok(leaf_from_f64(t, &[self.dim], &v))
    }

    fn encode_prompt(&self, t: &mut Tape<F>, tokens: Var) -> Result<Var> {
        let shape = t.value(tokens).shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::invalid_argument(
                "prompt tokens must be a non-empty [N, W] matrix",
            ));
        }
        if shape[1] != self.token_width {
            return Err(Error::invalid_argument(format!(
                "prompt token width {} does not match encoder width {}",
                shape[1], self.token_width
            )));
        }
        if self.variant == StubVariant::Constant {
            return Ok(self.constant_node(t));
        }
        let (n, w) = (shape[0], shape[1]);
        let proj = self.prompt_proj(n, w);
        let flat = t.reshape(tokens, &[1, n * w]);
        let pv = leaf_from_f64(t, &[n * w, self.dim], &proj);
        let out = t.matmul(flat, pv);
        let vec = t.reshape(out, &[self.dim]);
        Ok(t.l2_normalize(vec, F::from_f64(1e-12)))
    }

    fn weight_checksum(&self) -> u64 {
        let mut h = crate::archive::Fnv64::new();
        h.update(self.variant.tag().as_bytes());
        h.update(&(self.dim as u64).to_le_bytes());
        h.update(&(self.token_width as u64).to_le_bytes());
        for v in self.image_proj.iter().take(64) {
            h.update(&v.to_le_bytes());
        }
        h.finish()
    }
}
