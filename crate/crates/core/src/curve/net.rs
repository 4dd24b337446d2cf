//! The curve-parameter estimator: a seven-layer fully convolutional
//! network with symmetric feature concatenation and a tanh-bounded head
//! producing `3 * n_iterations` channels.

use std::path::Path;

use ndarray::{concatenate, Array1, Array3, Array4, ArrayD, Axis};
use nocturne_autograd::{kernels, Scalar, Tape, Var};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archive::{read_sidecar, write_sidecar, TensorArchive};
use crate::curve::CurveParameterMaps;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const DEFAULT_WIDTH: usize = 32;
pub const DEFAULT_ITERATIONS: usize = 8;
const KERNEL: usize = 3;
const FORMAT_VERSION: u32 = 1;

/// What feeds a layer: the previous activation or a skip concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerInput {
    Image,
    Prev,
    /// Concatenation of the activations of two earlier layers (0-based).
    Concat(usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: String,
    pub input: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u32,
    pub n_iterations: usize,
    pub width: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[Kh, Kw, Cin, Cout]`
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
}

/// Weights of the curve estimator plus its architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveNetworkParams {
    pub layers: Vec<ConvLayer>,
    pub n_iterations: usize,
    pub width: usize,
}

fn wiring(width: usize, n_iterations: usize) -> Vec<(LayerInput, usize, usize)> {
    let w = width;
    vec![
        (LayerInput::Image, 3, w),
        (LayerInput::Prev, w, w),
        (LayerInput::Prev, w, w),
        (LayerInput::Prev, w, w),
        (LayerInput::Concat(2, 3), 2 * w, w),
        (LayerInput::Concat(1, 4), 2 * w, w),
        (LayerInput::Concat(0, 5), 2 * w, 3 * n_iterations),
    ]
}

fn input_label(input: LayerInput) -> String {
    match input {
        LayerInput::Image => "image".into(),
        LayerInput::Prev => "prev".into(),
        LayerInput::Concat(a, b) => format!("concat({a},{b})"),
    }
}

impl CurveNetworkParams {
    /// Random initialization: weights from N(0, 0.02), zero biases.
    pub fn init(width: usize, n_iterations: usize, seed: u64) -> Result<Self> {
        if width == 0 || n_iterations == 0 {
            return Err(Error::config(
                "estimator width and iteration count must be positive",
            ));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).unwrap();
        let layers = wiring(width, n_iterations)
            .into_iter()
            .map(|(_, cin, cout)| ConvLayer {
                weight: Array4::from_shape_fn((KERNEL, KERNEL, cin, cout), |_| {
                    normal.sample(&mut rng) as f32
                }),
                bias: Array1::zeros(cout),
            })
            .collect();
        Ok(CurveNetworkParams {
            layers,
            n_iterations,
            width,
        })
    }

    pub fn default_arch(seed: u64) -> Result<Self> {
        Self::init(DEFAULT_WIDTH, DEFAULT_ITERATIONS, seed)
    }

    pub fn total_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Checks the parameter set is usable for inference.
    pub fn validate(&self) -> Result<()> {
        let expected = wiring(self.width, self.n_iterations);
        if self.layers.len() != expected.len() {
            return Err(Error::invalid_state(format!(
                "estimator parameters not initialized: expected {} layers, found {}",
                expected.len(),
                self.layers.len()
            )));
        }
        for (i, ((_, cin, cout), layer)) in expected.iter().zip(&self.layers).enumerate() {
            if layer.weight.dim() != (KERNEL, KERNEL, *cin, *cout)
                || layer.bias.len() != *cout
            {
                return Err(Error::invalid_state(format!(
                    "layer {i} has shape {:?}, expected {:?}",
                    layer.weight.dim(),
                    (KERNEL, KERNEL, cin, cout)
                )));
            }
            if !layer.weight.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::invalid_state(format!(
                    "layer {i} contains non-finite weights"
                )));
            }
        }
        Ok(())
    }

    /// Plain forward pass producing the raw `[H, W, 3n]` head output.
    fn head(&self, image: &Array3<f32>) -> Array3<f32> {
        let spec = wiring(self.width, self.n_iterations);
        let mut acts: Vec<Array3<f32>> = Vec::with_capacity(self.layers.len());
        for (i, ((input, _, _), layer)) in spec.iter().zip(&self.layers).enumerate() {
            let x = match *input {
                LayerInput::Image => image.clone(),
                LayerInput::Prev => acts[i - 1].clone(),
                LayerInput::Concat(a, b) => {
                    concatenate(Axis(2), &[acts[a].view(), acts[b].view()]).unwrap()
                }
            };
            let mut y = kernels::conv2d(
                x.view(),
                layer.weight.view(),
                Some(layer.bias.view()),
                1,
                1,
            );
            if i + 1 < self.layers.len() {
                y.mapv_inplace(|v| v.max(0.0));
            } else {
                y.mapv_inplace(f32::tanh);
            }
            acts.push(y);
        }
        acts.pop().unwrap()
    }

    /// Predicts curve maps for an image (deterministic inference).
    pub fn estimate(&self, image: &ImageTensor) -> Result<CurveParameterMaps> {
        self.validate()?;
        let head = self.head(image.data());
        let (h, w, _) = head.dim();
        let mut alpha = Array4::<f32>::zeros((self.n_iterations, h, w, 3));
        for n in 0..self.n_iterations {
            alpha
                .index_axis_mut(Axis(0), n)
                .assign(&head.slice(ndarray::s![.., .., 3 * n..3 * n + 3]));
        }
        CurveParameterMaps::new(alpha)
    }

    /// Registers all layer weights as tape leaves.
    pub fn tape_vars<F: Scalar>(&self, t: &mut Tape<F>) -> DceVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = t.leaf(cast_arr(&l.weight.clone().into_dyn()));
                let b = t.leaf(cast_arr(&l.bias.clone().into_dyn()));
                (w, b)
            })
            .collect();
        DceVars { layers }
    }

    /// Tape forward pass; returns one `[H, W, 3]` alpha node per iteration.
    pub fn forward_on_tape<F: Scalar>(
        &self,
        t: &mut Tape<F>,
        vars: &DceVars,
        image: Var,
    ) -> Vec<Var> {
        let spec = wiring(self.width, self.n_iterations);
        assert_eq!(vars.layers.len(), spec.len(), "layer variable count mismatch");
        let mut acts: Vec<Var> = Vec::with_capacity(spec.len());
        for (i, ((input, _, _), &(w, b))) in spec.iter().zip(&vars.layers).enumerate() {
            let x = match *input {
                LayerInput::Image => image,
                LayerInput::Prev => acts[i - 1],
                LayerInput::Concat(a, b2) => t.concat(2, &[acts[a], acts[b2]]),
            };
            let conv = t.conv2d(x, w, b, 1, 1);
            let y = if i + 1 < spec.len() {
                t.relu(conv)
            } else {
                t.tanh(conv)
            };
            acts.push(y);
        }
        let head = *acts.last().unwrap();
        (0..self.n_iterations)
            .map(|n| t.narrow(head, 2, 3 * n, 3))
            .collect()
    }

    pub fn metadata(&self) -> ModelMetadata {
        let layers = wiring(self.width, self.n_iterations)
            .into_iter()
            .enumerate()
            .map(|(i, (input, cin, cout))| LayerSpec {
                name: format!("layer{i}"),
                kernel: KERNEL,
                in_channels: cin,
                out_channels: cout,
                activation: if i + 1 < self.layers.len() {
                    "relu".into()
                } else {
                    "tanh".into()
                },
                input: input_label(input),
            })
            .collect();
        ModelMetadata {
            format_version: FORMAT_VERSION,
            n_iterations: self.n_iterations,
            width: self.width,
            layers,
        }
    }

    /// Adds the network weights to an archive under `net.layer{i}.*`.
    pub fn store(&self, archive: &mut TensorArchive) {
        for (i, layer) in self.layers.iter().enumerate() {
            archive.insert(
                format!("net.layer{i}.weight"),
                layer.weight.clone().into_dyn(),
            );
            archive.insert(format!("net.layer{i}.bias"), layer.bias.clone().into_dyn());
        }
    }

    pub fn from_archive(archive: &TensorArchive, meta: &ModelMetadata) -> Result<Self> {
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported model format version {}",
                meta.format_version
            )));
        }
        let spec = wiring(meta.width, meta.n_iterations);
        let mut layers = Vec::with_capacity(spec.len());
        for (i, (_, cin, cout)) in spec.iter().enumerate() {
            let w = archive.require(&format!("net.layer{i}.weight"))?;
            let b = archive.require(&format!("net.layer{i}.bias"))?;
            let weight = w
                .clone()
                .into_dimensionality::<ndarray::Ix4>()
                .map_err(|_| Error::invalid_state(format!("layer {i} weight rank")))?;
            if weight.dim() != (KERNEL, KERNEL, *cin, *cout) {
                return Err(Error::invalid_state(format!(
                    "layer {i} weight shape {:?} does not match metadata",
                    weight.dim()
                )));
            }
            let bias = b
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|_| Error::invalid_state(format!("layer {i} bias rank")))?;
            layers.push(ConvLayer { weight, bias });
        }
        let params = CurveNetworkParams {
            layers,
            n_iterations: meta.n_iterations,
            width: meta.width,
        };
        params.validate()?;
        Ok(params)
    }

    /// Writes weights plus the JSON metadata sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut archive = TensorArchive::new();
        self.store(&mut archive);
        archive.write(path)?;
        write_sidecar(path, &self.metadata())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = TensorArchive::read(path)?;
        let meta: ModelMetadata = read_sidecar(path)?;
        Self::from_archive(&archive, &meta)
    }
}

/// Tape handles for every layer's weight and bias.
pub struct DceVars {
    pub layers: Vec<(Var, Var)>,
}

fn cast_arr<F: Scalar>(a: &ArrayD<f32>) -> ArrayD<F> {
    a.mapv(|v| F::from_f64(v as f64))
}
