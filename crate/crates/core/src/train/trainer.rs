//! The stage-2 optimization loop: weighted total loss over patch
//! batches, gradient clipping, Adam updates, checkpointing and resume.

use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use nocturne_autograd::{Tape, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{read_sidecar, write_sidecar, TensorArchive};
use crate::curve::{apply_curve_node, CurveNetworkParams, ModelMetadata};
use crate::data::mixture::MixtureStream;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{
    color_loss_node, exposure_loss_node, smoothness_loss_node, spatial_loss_node,
    LossValue,
};
use crate::prior::{embed_prompt_values, LearnedPromptPair};
use crate::semantic::{build_antonym_pair, ClassLabel, TextEmbeddingCache};
use crate::train::optim::{clip_gradient_norm, Adam};
use crate::train::{LossWeights, TrainConfig};
use crate::vlm::{cast_image, match_positive_loss_node, EncoderHandle};

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Unweighted per-term values; disabled terms stay zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub exp: f32,
    pub spa: f32,
    pub rgb: f32,
    pub tv: f32,
    pub cls: f32,
    pub prompt: f32,
}

impl LossBreakdown {
    pub fn as_array(&self) -> [f32; 6] {
        [self.exp, self.spa, self.rgb, self.tv, self.cls, self.prompt]
    }

    pub fn weighted_total(&self, weights: &LossWeights) -> f32 {
        self.as_array()
            .iter()
            .zip(weights.as_array())
            .map(|(t, w)| t * w)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: u64,
    pub total: f32,
    pub breakdown: LossBreakdown,
}

/// One training sample: a patch, its class label and a diagnostic id.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub patch: ImageTensor,
    pub label: ClassLabel,
    pub id: String,
}

/// In-memory sample pool with seeded with-replacement batches; used for
/// smoke tests and fixed-set experiments.
pub struct FixedPatches {
    items: Vec<TrainItem>,
    rng: ChaCha20Rng,
    draws: u64,
}

impl FixedPatches {
    pub fn new(items: Vec<TrainItem>, seed: u64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::config("fixed patch pool is empty"));
        }
        Ok(FixedPatches {
            items,
            rng: ChaCha20Rng::seed_from_u64(seed),
            draws: 0,
        })
    }

    fn next_batch(&mut self, n: usize) -> Vec<TrainItem> {
        (0..n)
            .map(|_| {
                self.draws += 1;
                self.items[self.rng.gen_range(0..self.items.len())].clone()
            })
            .collect()
    }

    fn fast_forward(&mut self, draws: u64) {
        for _ in 0..draws {
            let _ = self.rng.gen_range(0..self.items.len());
        }
        self.draws += draws;
    }
}

/// Where training batches come from.
pub enum BatchSource {
    Mixture(MixtureStream),
    Fixed(FixedPatches),
}

impl BatchSource {
    fn next_batch(&mut self, n: usize, workers: usize) -> Result<Vec<TrainItem>> {
        match self {
            BatchSource::Fixed(pool) => Ok(pool.next_batch(n)),
            BatchSource::Mixture(stream) => Ok(stream
                .next_batch(n, workers)?
                .into_iter()
                .map(|s| TrainItem {
                    id: format!("{}/{}", s.dataset_id, s.image_id),
                    patch: s.patch,
                    label: s.label,
                })
                .collect()),
        }
    }

    fn draws(&self) -> u64 {
        match self {
            BatchSource::Fixed(pool) => pool.draws,
            BatchSource::Mixture(stream) => stream.draws(),
        }
    }

    fn fast_forward(&mut self, draws: u64) {
        match self {
            BatchSource::Fixed(pool) => pool.fast_forward(draws),
            BatchSource::Mixture(stream) => stream.fast_forward(draws),
        }
    }
}

struct GraphOutputs {
    total: Var,
    terms: [Option<Var>; 6],
}

/// Builds the batch objective. Terms with zero weight are skipped, so
/// with `lambda_cls = lambda_prompt = 0` the encoder is never invoked.
#[allow(clippy::too_many_arguments)]
fn build_graph(
    t: &mut Tape<f32>,
    batch: &[TrainItem],
    params: &CurveNetworkParams,
    vars: &crate::curve::DceVars,
    cfg: &TrainConfig,
    encoder: &EncoderHandle<f32>,
    prompt_embeds: Option<&(Vec<f32>, Vec<f32>)>,
    text_cache: &TextEmbeddingCache<f32>,
) -> Result<GraphOutputs> {
    let w = &cfg.weights;
    let use_encoder = w.lambda_cls > 0.0 || w.lambda_prompt > 0.0;
    let inv_b = 1.0 / batch.len() as f32;

    // text embeddings resolved up front (constants on the tape)
    let mut text_embeds = Vec::with_capacity(batch.len());
    if w.lambda_cls > 0.0 {
        for item in batch {
            let pair = build_antonym_pair(&item.label);
            let pos = text_cache.get_or_encode(encoder.as_ref(), &pair.positive_text)?;
            let neg = text_cache.get_or_encode(encoder.as_ref(), &pair.negative_text)?;
            text_embeds.push((pos, neg));
        }
    }

    let mut per_term: [Vec<Var>; 6] = Default::default();
    for (bi, item) in batch.iter().enumerate() {
        let img = t.leaf(cast_image::<f32>(&item.patch));
        let alphas = params.forward_on_tape(t, vars, img);
        let enhanced = apply_curve_node(t, img, &alphas);
        if w.lambda_exp > 0.0 {
            per_term[0].push(exposure_loss_node(
                t,
                enhanced,
                cfg.exposure_patch_size,
                cfg.exposure_target,
            ));
        }
        if w.lambda_spa > 0.0 {
            per_term[1].push(spatial_loss_node(t, enhanced, img, cfg.spatial_region_size));
        }
        if w.lambda_rgb > 0.0 {
            per_term[2].push(color_loss_node(t, enhanced));
        }
        if w.lambda_tv > 0.0 {
            per_term[3].push(smoothness_loss_node(t, &alphas));
        }
        if use_encoder {
            // one image encoding feeds both guidance heads
            let embed = encoder.encode_image(t, enhanced)?;
            if w.lambda_cls > 0.0 {
                let (pos, neg) = &text_embeds[bi];
                let pv = t.leaf(vec_leaf(pos));
                let nv = t.leaf(vec_leaf(neg));
                per_term[4].push(match_positive_loss_node(t, embed, pv, nv));
            }
            if w.lambda_prompt > 0.0 {
                let (pos, neg) = prompt_embeds.ok_or_else(|| {
                    Error::invalid_state("prompt embeddings missing with lambda_prompt > 0")
                })?;
                let pv = t.leaf(vec_leaf(pos));
                let nv = t.leaf(vec_leaf(neg));
                per_term[5].push(match_positive_loss_node(t, embed, pv, nv));
            }
        }
    }

    let lambdas = w.as_array();
    let mut terms: [Option<Var>; 6] = [None; 6];
    let mut weighted = Vec::new();
    for (i, items) in per_term.iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let sum = t.add_n(items);
        let mean = t.affine(sum, inv_b, 0.0);
        terms[i] = Some(mean);
        weighted.push(t.affine(mean, lambdas[i], 0.0));
    }
    let total = if weighted.is_empty() {
        t.scalar(0.0)
    } else {
        t.add_n(&weighted)
    };
    Ok(GraphOutputs { total, terms })
}

fn vec_leaf(v: &[f32]) -> ArrayD<f32> {
    ArrayD::from_shape_vec(ndarray::IxDyn(&[v.len()]), v.to_vec()).unwrap()
}

fn read_outputs(t: &Tape<f32>, g: &GraphOutputs) -> (f32, LossBreakdown) {
    let term = |v: Option<Var>| v.map(|v| t.scalar_value(v)).unwrap_or(0.0);
    let breakdown = LossBreakdown {
        exp: term(g.terms[0]),
        spa: term(g.terms[1]),
        rgb: term(g.terms[2]),
        tv: term(g.terms[3]),
        cls: term(g.terms[4]),
        prompt: term(g.terms[5]),
    };
    (t.scalar_value(g.total), breakdown)
}

/// Evaluates the weighted batch objective and its unweighted per-term
/// breakdown, without touching gradients.
pub fn total_loss(
    batch: &[TrainItem],
    params: &CurveNetworkParams,
    cfg: &TrainConfig,
    encoder: &EncoderHandle<f32>,
    prompts: Option<&LearnedPromptPair>,
) -> Result<(LossValue, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::invalid_argument("loss batch is empty"));
    }
    params.validate()?;
    let prompt_embeds = match (cfg.weights.lambda_prompt > 0.0, prompts) {
        (true, Some(p)) => Some(embed_prompt_values::<f32>(p, encoder.as_ref())?),
        (true, None) => {
            return Err(Error::config(
                "lambda_prompt > 0 requires a learned prompt pair",
            ))
        }
        _ => None,
    };
    let cache = TextEmbeddingCache::new();
    let mut t = Tape::<f32>::new();
    let vars = params.tape_vars(&mut t);
    let graph = build_graph(
        &mut t,
        batch,
        params,
        &vars,
        cfg,
        encoder,
        prompt_embeds.as_ref(),
        &cache,
    )?;
    let (total, breakdown) = read_outputs(&t, &graph);
    Ok((LossValue::new(total)?, breakdown))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainCheckpointMeta {
    format_version: u32,
    model: ModelMetadata,
    step: u64,
    adam_step: u64,
    source_draws: u64,
    seed: u64,
    best_total: Option<f32>,
    best_step: Option<u64>,
}

/// Stage-2 trainer; owns the parameters, optimizer state and data source.
pub struct Trainer {
    cfg: TrainConfig,
    params: CurveNetworkParams,
    opt: Adam,
    step: u64,
    source: BatchSource,
    encoder: EncoderHandle<f32>,
    prompt_embeds: Option<(Vec<f32>, Vec<f32>)>,
    text_cache: TextEmbeddingCache<f32>,
    best: Option<(f32, u64, CurveNetworkParams)>,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        source: BatchSource,
        encoder: EncoderHandle<f32>,
        prompts: Option<&LearnedPromptPair>,
    ) -> Result<Self> {
        cfg.weights.validate()?;
        let params =
            CurveNetworkParams::init(cfg.network_width, cfg.n_iterations, cfg.seed)?;
        Self::with_params(cfg, source, encoder, prompts, params, None)
    }

    fn with_params(
        cfg: TrainConfig,
        source: BatchSource,
        encoder: EncoderHandle<f32>,
        prompts: Option<&LearnedPromptPair>,
        params: CurveNetworkParams,
        resume: Option<ResumeState>,
    ) -> Result<Self> {
        if cfg.weights.lambda_prompt > 0.0 && prompts.is_none() {
            return Err(Error::config(
                "lambda_prompt > 0 requires a learned prompt pair",
            ));
        }
        let prompt_embeds = match prompts {
            Some(p) if cfg.weights.lambda_prompt > 0.0 => {
                Some(embed_prompt_values::<f32>(p, encoder.as_ref())?)
            }
            _ => None,
        };
        let shapes: Vec<Vec<usize>> = params
            .layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.shape().to_vec(),
                    l.bias.shape().to_vec(),
                ]
            })
            .collect();
        let mut opt = Adam::new(cfg.learning_rate, cfg.weight_decay, &shapes);
        let mut trainer = Trainer {
            cfg,
            params,
            opt: Adam::new(0.0, 0.0, &[]),
            step: 0,
            source,
            encoder,
            prompt_embeds,
            text_cache: TextEmbeddingCache::new(),
            best: None,
        };
        if let Some(r) = resume {
            opt.restore(r.adam_step, r.m, r.v)?;
            trainer.step = r.step;
            trainer.source.fast_forward(r.source_draws);
            trainer.best = r.best;
        }
        trainer.opt = opt;
        Ok(trainer)
    }

    /// Restores a trainer from a checkpoint for bitwise-identical
    /// continuation (same config, seed and worker count).
    pub fn resume(
        cfg: TrainConfig,
        source: BatchSource,
        encoder: EncoderHandle<f32>,
        prompts: Option<&LearnedPromptPair>,
        checkpoint: &Path,
    ) -> Result<Self> {
        let archive = TensorArchive::read(checkpoint)?;
        let meta: TrainCheckpointMeta = read_sidecar(checkpoint)?;
        if meta.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint format version {}",
                meta.format_version
            )));
        }
        let params = CurveNetworkParams::from_archive(&archive, &meta.model)?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for i in 0..params.layers.len() {
            for kind in ["weight", "bias"] {
                m.push(archive.require(&format!("opt.layer{i}.{kind}.m"))?.clone());
                v.push(archive.require(&format!("opt.layer{i}.{kind}.v"))?.clone());
            }
        }
        let best = match (meta.best_total, meta.best_step) {
            (Some(total), Some(step)) => {
                // best params travel in the same archive under best.*
                let mut best_archive = TensorArchive::new();
                for i in 0..params.layers.len() {
                    for kind in ["weight", "bias"] {
                        let name = format!("net.layer{i}.{kind}");
                        best_archive.insert(
                            name.clone(),
                            archive.require(&format!("best.{name}"))?.clone(),
                        );
                    }
                }
                let best_params =
                    CurveNetworkParams::from_archive(&best_archive, &meta.model)?;
                Some((total, step, best_params))
            }
            _ => None,
        };
        let resume = ResumeState {
            step: meta.step,
            adam_step: meta.adam_step,
            source_draws: meta.source_draws,
            m,
            v,
            best,
        };
        Self::with_params(cfg, source, encoder, prompts, params, Some(resume))
    }

    pub fn params(&self) -> &CurveNetworkParams {
        &self.params
    }

    pub fn best_params(&self) -> Option<&CurveNetworkParams> {
        self.best.as_ref().map(|(_, _, p)| p)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn encoder_checksum(&self) -> u64 {
        self.encoder.weight_checksum()
    }

    /// Runs the loop until `cfg.steps`, invoking `observer` once per
    /// step. Checkpoints land in `out_dir` (when given) every
    /// `checkpoint_every` steps and at the end: `step_NNNNNN.ntar`,
    /// pruned to the most recent `keep_checkpoints`, plus `best.ntar`.
    pub fn run(
        &mut self,
        out_dir: Option<&Path>,
        observer: &mut dyn FnMut(&StepRecord),
    ) -> Result<()> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.step < self.cfg.steps {
            let batch = self
                .source
                .next_batch(self.cfg.batch_size, self.cfg.workers)?;
            let record = self.train_step(&batch)?;
            observer(&record);
            if let Some(dir) = out_dir {
                if self.step.is_multiple_of(self.cfg.checkpoint_every) || self.step == self.cfg.steps
                {
                    self.write_checkpoints(dir)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.write_checkpoints(dir)?;
        }
        Ok(())
    }

    fn train_step(&mut self, batch: &[TrainItem]) -> Result<StepRecord> {
        let mut t = Tape::<f32>::new();
        let vars = self.params.tape_vars(&mut t);
        let graph = build_graph(
            &mut t,
            batch,
            &self.params,
            &vars,
            &self.cfg,
            &self.encoder,
            self.prompt_embeds.as_ref(),
            &self.text_cache,
        )?;
        let (total, breakdown) = read_outputs(&t, &graph);
        self.step += 1;
        if !total.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|b| b.id.as_str()).collect();
            return Err(Error::invalid_state(format!(
                "non-finite loss {total} at step {}; batch: {}",
                self.step,
                ids.join(", ")
            )));
        }

        let grads_by_node = t.backward(graph.total);
        let mut grads: Vec<Option<ArrayD<f32>>> = Vec::new();
        for (wv, bv) in &vars.layers {
            grads.push(grads_by_node.wrt(*wv).cloned());
            grads.push(grads_by_node.wrt(*bv).cloned());
        }
        clip_gradient_norm(&mut grads, self.cfg.grad_clip_norm)?;

        let mut flat: Vec<ArrayD<f32>> = self
            .params
            .layers
            .iter()
            .flat_map(|l| [l.weight.clone().into_dyn(), l.bias.clone().into_dyn()])
            .collect();
        self.opt.step(&mut flat, &grads)?;
        for (i, layer) in self.params.layers.iter_mut().enumerate() {
            layer.weight = flat[2 * i]
                .clone()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap();
            layer.bias = flat[2 * i + 1]
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
        }

        if self.best.as_ref().is_none_or(|(b, _, _)| total < *b) {
            self.best = Some((total, self.step, self.params.clone()));
        }
        Ok(StepRecord {
            step: self.step,
            total,
            breakdown,
        })
    }

    fn checkpoint_archive(&self) -> TensorArchive {
        let mut archive = TensorArchive::new();
        self.params.store(&mut archive);
        let (m, v) = self.opt.moments();
        let mut idx = 0usize;
        for i in 0..self.params.layers.len() {
            for kind in ["weight", "bias"] {
                archive.insert(format!("opt.layer{i}.{kind}.m"), m[idx].clone());
                archive.insert(format!("opt.layer{i}.{kind}.v"), v[idx].clone());
                idx += 1;
            }
        }
        if let Some((_, _, best_params)) = &self.best {
            let mut tmp = TensorArchive::new();
            best_params.store(&mut tmp);
            for name in tmp.names().map(String::from).collect::<Vec<_>>() {
                archive.insert(format!("best.{name}"), tmp.get(&name).unwrap().clone());
            }
        }
        archive
    }

    fn meta(&self) -> TrainCheckpointMeta {
        TrainCheckpointMeta {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: self.params.metadata(),
            step: self.step,
            adam_step: self.opt.step_count(),
            source_draws: self.source.draws(),
            seed: self.cfg.seed,
            best_total: self.best.as_ref().map(|(t, _, _)| *t),
            best_step: self.best.as_ref().map(|(_, s, _)| *s),
        }
    }

    fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        let archive = self.checkpoint_archive();
        let meta = self.meta();
        let path = dir.join(format!("step_{:06}.ntar", self.step));
        archive.write(&path)?;
        write_sidecar(&path, &meta)?;
        // best-by-total-loss copy for inference
        if let Some((_, _, best_params)) = &self.best {
            best_params.save(dir.join("best.ntar"))?;
        }
        self.prune_checkpoints(dir)?;
        Ok(())
    }

    fn prune_checkpoints(&self, dir: &Path) -> Result<()> {
        let mut steps: Vec<(u64, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(step) = name
                .strip_prefix("step_")
                .and_then(|s| s.strip_suffix(".ntar"))
                .and_then(|s| s.parse::<u64>().ok())
            {
                steps.push((step, entry.path()));
            }
        }
        steps.sort_by_key(|(s, _)| *s);
        while steps.len() > self.cfg.keep_checkpoints {
            let (_, path) = steps.remove(0);
            let _ = std::fs::remove_file(crate::archive::sidecar_path(&path));
            std::fs::remove_file(&path).map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }
}

struct ResumeState {
    step: u64,
    adam_step: u64,
    source_draws: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
    best: Option<(f32, u64, CurveNetworkParams)>,
}

/// Loads estimator weights from either a bare model file (`best.ntar`,
/// `nocturne train-prompts` output) or a full training checkpoint
/// (`step_NNNNNN.ntar`).
pub fn load_enhancer(path: &Path) -> Result<CurveNetworkParams> {
    if let Ok(params) = CurveNetworkParams::load(path) {
        return Ok(params);
    }
    let archive = TensorArchive::read(path)?;
    let meta: TrainCheckpointMeta = read_sidecar(path)?;
    CurveNetworkParams::from_archive(&archive, &meta.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vlm::{build_encoder, EncoderConfig};
    use ndarray::Array3;

    fn dark_patches(n: usize, side: usize, seed: u64) -> Vec<TrainItem> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let base = rng.gen_range(0.03..0.2f32);
                let patch = ImageTensor::new(Array3::from_shape_fn(
                    (side, side, 3),
                    |_| (base + rng.gen_range(-0.02..0.02f32)).clamp(0.0, 1.0),
                ))
                .unwrap();
                TrainItem {
                    patch,
                    label: ClassLabel::new(["car", "dog", "person"][i % 3]).unwrap(),
                    id: format!("fixed/{i}"),
                }
            })
            .collect()
    }

    fn smoke_cfg(steps: u64, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            steps,
            batch_size: 4,
            patch_size: 32,
            learning_rate: 1e-3,
            checkpoint_every: 50,
            network_width: 8,
            n_iterations: 4,
            weights: LossWeights {
                lambda_prompt: 0.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        }
    }

    fn stub() -> EncoderHandle<f32> {
        build_encoder::<f32>(&EncoderConfig::stub()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_total_and_all_zero_breakdown() {
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda_exp: 0.0,
                lambda_spa: 0.0,
                lambda_rgb: 0.0,
                lambda_tv: 0.0,
                lambda_cls: 0.0,
                lambda_prompt: 0.0,
            },
            ..smoke_cfg(1, 0)
        };
        let params = CurveNetworkParams::init(8, 4, 0).unwrap();
        let batch = dark_patches(2, 32, 1);
        let (total, breakdown) =
            total_loss(&batch, &params, &cfg, &stub(), None).unwrap();
        assert_eq!(total.value(), 0.0);
        assert_eq!(breakdown.as_array(), [0.0; 6]);
    }

    #[test]
    fn disabling_guidance_reduces_to_four_terms() {
        let cfg = smoke_cfg(1, 0);
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda_cls: 0.0,
                lambda_prompt: 0.0,
                ..LossWeights::default()
            },
            ..cfg
        };
        let params = CurveNetworkParams::init(8, 4, 1).unwrap();
        let batch = dark_patches(3, 32, 2);
        let (_, b) = total_loss(&batch, &params, &cfg, &stub(), None).unwrap();
        assert_eq!(b.cls, 0.0);
        assert_eq!(b.prompt, 0.0);
        assert!(b.exp > 0.0);
        assert!(b.tv >= 0.0);
    }

    #[test]
    fn total_is_dot_product_of_weights_and_breakdown() {
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda_prompt: 0.0,
                ..LossWeights::default()
            },
            ..smoke_cfg(1, 0)
        };
        let params = CurveNetworkParams::init(8, 4, 2).unwrap();
        let batch = dark_patches(4, 32, 3);
        let (total, b) = total_loss(&batch, &params, &cfg, &stub(), None).unwrap();
        let dot = b.weighted_total(&cfg.weights);
        let rel = (total.value() - dot).abs() / total.value().max(1e-9);
        assert!(rel < 1e-6, "total {} vs dot {}", total.value(), dot);
    }

    #[test]
    fn smoke_training_reduces_loss() {
        let cfg = smoke_cfg(200, 3);
        let items = dark_patches(16, 32, 4);
        let source = BatchSource::Fixed(FixedPatches::new(items, cfg.seed).unwrap());
        let mut trainer = Trainer::new(cfg, source, stub(), None).unwrap();
        let mut records = Vec::new();
        trainer
            .run(None, &mut |r| records.push(r.clone()))
            .unwrap();
        assert_eq!(records.len(), 200);
        let first: f32 = records[..20].iter().map(|r| r.total).sum::<f32>() / 20.0;
        let last: f32 = records[180..].iter().map(|r| r.total).sum::<f32>() / 20.0;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn all_zero_weights_leave_params_at_initialization() {
        let mut cfg = smoke_cfg(10, 4);
        cfg.weights = LossWeights {
            lambda_exp: 0.0,
            lambda_spa: 0.0,
            lambda_rgb: 0.0,
            lambda_tv: 0.0,
            lambda_cls: 0.0,
            lambda_prompt: 0.0,
        };
        let items = dark_patches(4, 32, 5);
        let source = BatchSource::Fixed(FixedPatches::new(items, cfg.seed).unwrap());
        let init = CurveNetworkParams::init(cfg.network_width, cfg.n_iterations, cfg.seed)
            .unwrap();
        let mut trainer = Trainer::new(cfg, source, stub(), None).unwrap();
        trainer.run(None, &mut |_| {}).unwrap();
        assert_eq!(trainer.params(), &init);
    }

    #[test]
    fn resume_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let items = dark_patches(8, 32, 6);

        // uninterrupted run: 40 steps
        let cfg = TrainConfig {
            checkpoint_every: 20,
            ..smoke_cfg(40, 7)
        };
        let source = BatchSource::Fixed(FixedPatches::new(items.clone(), cfg.seed).unwrap());
        let mut full = Trainer::new(cfg.clone(), source, stub(), None).unwrap();
        let mut full_records = Vec::new();
        full.run(Some(&dir.path().join("full")), &mut |r| {
            full_records.push(r.clone())
        })
        .unwrap();

        // interrupted at 20, resumed to 40
        let cfg_half = TrainConfig {
            steps: 20,
            ..cfg.clone()
        };
        let source = BatchSource::Fixed(FixedPatches::new(items.clone(), cfg.seed).unwrap());
        let mut half = Trainer::new(cfg_half, source, stub(), None).unwrap();
        half.run(Some(&dir.path().join("half")), &mut |_| {}).unwrap();

        let source = BatchSource::Fixed(FixedPatches::new(items, cfg.seed).unwrap());
        let mut resumed = Trainer::resume(
            cfg.clone(),
            source,
            stub(),
            None,
            &dir.path().join("half/step_000020.ntar"),
        )
        .unwrap();
        let mut resumed_records = Vec::new();
        resumed
            .run(Some(&dir.path().join("resumed")), &mut |r| {
                resumed_records.push(r.clone())
            })
            .unwrap();

        assert_eq!(resumed_records.len(), 20);
        for (a, b) in full_records[20..].iter().zip(&resumed_records) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.total.to_bits(), b.total.to_bits(), "step {}", a.step);
        }
        // final checkpoints byte-identical
        let a = std::fs::read(dir.path().join("full/step_000040.ntar")).unwrap();
        let b = std::fs::read(dir.path().join("resumed/step_000040.ntar")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoints_are_pruned_to_keep_count() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            checkpoint_every: 10,
            keep_checkpoints: 2,
            ..smoke_cfg(50, 8)
        };
        let items = dark_patches(4, 32, 9);
        let source = BatchSource::Fixed(FixedPatches::new(items, cfg.seed).unwrap());
        let mut trainer = Trainer::new(cfg, source, stub(), None).unwrap();
        trainer.run(Some(dir.path()), &mut |_| {}).unwrap();
        let checkpoints: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| {
                let name = e.unwrap().file_name().to_string_lossy().into_owned();
                (name.starts_with("step_") && name.ends_with(".ntar")).then_some(name)
            })
            .collect();
        assert_eq!(checkpoints.len(), 2, "{checkpoints:?}");
        assert!(dir.path().join("best.ntar").is_file());
    }

    #[test]
    fn encoder_checksum_constant_across_training() {
        let cfg = smoke_cfg(20, 10);
        let enc = stub();
        let before = enc.weight_checksum();
        let items = dark_patches(4, 32, 11);
        let source = BatchSource::Fixed(FixedPatches::new(items, cfg.seed).unwrap());
        let mut trainer = Trainer::new(cfg, source, enc.clone(), None).unwrap();
        trainer.run(None, &mut |_| {}).unwrap();
        assert_eq!(enc.weight_checksum(), before);
    }
}
