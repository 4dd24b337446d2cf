//! Open-vocabulary antonym-prompt classification loss: enhanced patches
//! should be recognizable as their annotated class.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nocturne_autograd::{Scalar, Tape};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::LossValue;
use crate::vlm::{
    cast_image, match_positive_loss_node, EncoderHandle, ImageTextEncoder,
};

/// A free-form class name, normalized to lowercase with single spaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassLabel(String);

impl ClassLabel {
    pub fn new(raw: &str) -> Result<Self> {
        let normalized = raw
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if normalized.is_empty() {
            return Err(Error::invalid_argument("class label must be non-empty"));
        }
        Ok(ClassLabel(normalized))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The two class prompts used as the head's classes. The template is
/// instantiated verbatim; articles are not adjusted.
#[derive(Debug, Clone, PartialEq)]
pub struct AntonymPromptPair {
    pub positive_text: String,
    pub negative_text: String,
    pub class_name: ClassLabel,
}

pub fn build_antonym_pair(cls: &ClassLabel) -> AntonymPromptPair {
    AntonymPromptPair {
        positive_text: format!("a photo of a {}", cls.as_str()),
        negative_text: format!("not a photo of a {}", cls.as_str()),
        class_name: cls.clone(),
    }
}

/// Prompt-string-keyed cache of text embeddings; concurrent reads,
/// exclusive insertion, unbounded within a run.
pub struct TextEmbeddingCache<F> {
    map: RwLock<HashMap<String, Arc<Vec<F>>>>,
}

impl<F: Scalar> Default for TextEmbeddingCache<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> TextEmbeddingCache<F> {
    pub fn new() -> Self {
        TextEmbeddingCache {
            map: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached embedding or encodes and stores it.
    pub fn get_or_encode(
        &self,
        enc: &dyn ImageTextEncoder<F>,
        text: &str,
    ) -> Result<Arc<Vec<F>>> {
        if let Some(hit) = self.map.read().unwrap().get(text) {
            return Ok(hit.clone());
        }
        let values = crate::vlm::embed_text_values(enc, text)?;
        let arc = Arc::new(values);
        let mut map = self.map.write().unwrap();
        Ok(map.entry(text.to_string()).or_insert(arc).clone())
    }
}

/// `-ln yhat_cls` for one enhanced patch against its antonym prompts;
/// gradients reach the patch.
pub fn semantic_loss<F: Scalar>(
    patch: &ImageTensor,
    cls: &ClassLabel,
    enc: &dyn ImageTextEncoder<F>,
    cache: &TextEmbeddingCache<F>,
) -> Result<LossValue> {
    let pair = build_antonym_pair(cls);
    let pos = cache.get_or_encode(enc, &pair.positive_text)?;
    let neg = cache.get_or_encode(enc, &pair.negative_text)?;
    let mut t = Tape::<F>::new();
    let iv = t.leaf(cast_image::<F>(patch));
    let e = enc.encode_image(&mut t, iv)?;
    let pv = t.leaf(vec_to_arr(&pos));
    let nv = t.leaf(vec_to_arr(&neg));
    let loss = match_positive_loss_node(&mut t, e, pv, nv);
    LossValue::new(t.scalar_value(loss).to_f64() as f32)
}

/// Mean of [`semantic_loss`] over a batch; text embeddings are encoded
/// once per distinct prompt through the cache.
pub fn batch_semantic_loss<F: Scalar>(
    patches: &[(ImageTensor, ClassLabel)],
    enc: &EncoderHandle<F>,
    cache: &TextEmbeddingCache<F>,
) -> Result<LossValue> {
    if patches.is_empty() {
        return Err(Error::invalid_argument("semantic loss batch is empty"));
    }
    let mut total = 0.0f64;
    for (patch, cls) in patches {
        total += semantic_loss(patch, cls, enc.as_ref(), cache)?.value() as f64;
    }
    LossValue::new((total / patches.len() as f64) as f32)
}

fn vec_to_arr<F: Scalar>(v: &[F]) -> ndarray::ArrayD<F> {
    ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[v.len()]), v.to_vec()).unwrap()
}
