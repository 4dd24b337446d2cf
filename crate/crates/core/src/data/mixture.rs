//! Weighted multi-dataset patch stream.
//!
//! Each draw picks a dataset proportionally to its weight, then takes the
//! next entry of that dataset's current epoch permutation (reshuffled on
//! wrap-around). The stream is infinite and fully determined by its
//! seed; resuming is a matter of replaying the draw count without image
//! IO.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::patch::extract_patch;
use crate::data::AnnotationSet;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::semantic::ClassLabel;

/// A draw: dataset index plus (record, annotation) indices within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub dataset: usize,
    pub record: usize,
    pub annotation: usize,
}

/// A resolved training patch.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub patch: ImageTensor,
    pub label: ClassLabel,
    pub dataset_id: String,
    pub image_id: u64,
}

struct FlatDataset {
    set: AnnotationSet,
    /// flat (record, annotation) index pairs
    samples: Vec<(u32, u32)>,
    perm: Vec<u32>,
    pos: usize,
}

pub struct MixtureStream {
    datasets: Vec<FlatDataset>,
    cumulative_weights: Vec<f64>,
    rng: ChaCha20Rng,
    draws: u64,
    patch_size: usize,
    min_context: usize,
}

impl MixtureStream {
    /// `weight = None` uses the dataset's natural size.
    pub fn new(
        sources: Vec<(AnnotationSet, Option<f64>)>,
        seed: u64,
        patch_size: usize,
        min_context: usize,
    ) -> Result<Self> {
        let mut datasets = Vec::new();
        let mut cumulative_weights = Vec::new();
        let mut total = 0.0f64;
        for (set, weight) in sources {
            let mut samples = Vec::new();
            for (ri, record) in set.records.iter().enumerate() {
                for ai in 0..record.annotations.len() {
                    samples.push((ri as u32, ai as u32));
                }
            }
            if samples.is_empty() {
                continue;
            }
            let w = weight.unwrap_or(samples.len() as f64);
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config(format!(
                    "dataset {} has non-positive weight {w}",
                    set.dataset_id
                )));
            }
            total += w;
            cumulative_weights.push(total);
            let n = samples.len();
            datasets.push(FlatDataset {
                set,
                samples,
                perm: Vec::new(),
                pos: n, // forces a shuffle on first use
            });
        }
        if datasets.is_empty() {
            return Err(Error::config("all datasets are empty"));
        }
        Ok(MixtureStream {
            datasets,
            cumulative_weights,
            rng: ChaCha20Rng::seed_from_u64(seed),
            draws: 0,
            patch_size,
            min_context,
        })
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn dataset_ids(&self) -> Vec<&str> {
        self.datasets
            .iter()
            .map(|d| d.set.dataset_id.as_str())
            .collect()
    }

    /// Next draw; index-only, no image IO.
    pub fn next_spec(&mut self) -> PatchSpec {
        let total = *self.cumulative_weights.last().unwrap();
        let pick = self.rng.gen_range(0.0..total);
        let di = self
            .cumulative_weights
            .iter()
            .position(|&c| pick < c)
            .unwrap_or(self.datasets.len() - 1);
        let ds = &mut self.datasets[di];
        if ds.pos >= ds.samples.len() {
            ds.perm = (0..ds.samples.len() as u32).collect();
            ds.perm.shuffle(&mut self.rng);
            ds.pos = 0;
        }
        let flat = ds.perm[ds.pos] as usize;
        ds.pos += 1;
        self.draws += 1;
        let (record, annotation) = ds.samples[flat];
        PatchSpec {
            dataset: di,
            record: record as usize,
            annotation: annotation as usize,
        }
    }

    /// Loads the image behind a spec and extracts its patch.
    pub fn resolve(&self, spec: &PatchSpec) -> Result<PatchSample> {
        let ds = &self.datasets[spec.dataset];
        let record = &ds.set.records[spec.record];
        let ann = &record.annotations[spec.annotation];
        let image = ImageTensor::load(&record.image_path)?;
        let patch = extract_patch(&image, &ann.bbox, self.patch_size, self.min_context)?;
        Ok(PatchSample {
            patch,
            label: ann.label.clone(),
            dataset_id: ds.set.dataset_id.clone(),
            image_id: record.image_id,
        })
    }

    pub fn next_sample(&mut self) -> Result<PatchSample> {
        let spec = self.next_spec();
        self.resolve(&spec)
    }

    /// Draws `n` specs, then resolves them in up to `workers` threads.
    /// Output order always follows draw order.
    pub fn next_batch(&mut self, n: usize, workers: usize) -> Result<Vec<PatchSample>> {
        let specs: Vec<PatchSpec> = (0..n).map(|_| self.next_spec()).collect();
        if workers <= 1 {
            return specs.iter().map(|s| self.resolve(s)).collect();
        }
        let stream = &*self;
        let results: Vec<Result<PatchSample>> = std::thread::scope(|scope| {
            let chunk = specs.len().div_ceil(workers);
            let handles: Vec<_> = specs
                .chunks(chunk)
                .map(|chunk_specs| {
                    scope.spawn(move || {
                        chunk_specs
                            .iter()
                            .map(|s| stream.resolve(s))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("patch worker panicked"))
                .collect()
        });
        results.into_iter().collect()
    }

    /// Replays `n` draws without resolving them (checkpoint resume).
    pub fn fast_forward(&mut self, n: u64) {
        for _ in 0..n {
            let _ = self.next_spec();
        }
    }
}

/// Builds the stream from pre-loaded datasets.
pub fn build_mixture(
    sources: Vec<(AnnotationSet, Option<f64>)>,
    seed: u64,
    patch_size: usize,
    min_context: usize,
) -> Result<MixtureStream> {
    MixtureStream::new(sources, seed, patch_size, min_context)
}
