//! Iterative pixel-wise enhancement curves.
//!
//! One step maps intensity `x` through `x + alpha * x * (1 - x)` with a
//! per-pixel, per-channel coefficient `alpha` in `[-1, 1]`; the map keeps
//! `[0, 1]` invariant and is applied for a fixed number of iterations.

mod net;

pub use net::{CurveNetworkParams, DceVars, LayerSpec, ModelMetadata};

use ndarray::{Array3, Array4, Axis};
use nocturne_autograd::{Scalar, Tape, Var};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Per-iteration, per-pixel, per-channel curve coefficients in `[-1, 1]`,
/// shaped `[N_iter, H, W, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveParameterMaps {
    alpha: Array4<f32>,
}

impl CurveParameterMaps {
    pub fn new(alpha: Array4<f32>) -> Result<Self> {
        let (n, h, w, c) = alpha.dim();
        if n == 0 || h == 0 || w == 0 || c != 3 {
            return Err(Error::invalid_argument(
                "curve maps must be [N_iter, H, W, 3] with positive sizes",
            ));
        }
        if !alpha
            .iter()
            .all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
        {
            return Err(Error::invalid_argument(
                "curve coefficients must be finite and in [-1, 1]",
            ));
        }
        Ok(CurveParameterMaps { alpha })
    }

    pub fn zeros(n_iterations: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Array4::zeros((n_iterations, h, w, 3)))
    }

    pub fn n_iterations(&self) -> usize {
        self.alpha.dim().0
    }

    pub fn alpha(&self) -> &Array4<f32> {
        &self.alpha
    }

    pub fn slice(&self, n: usize) -> Array3<f32> {
        self.alpha.index_axis(Axis(0), n).to_owned()
    }
}

fn check_step_inputs(image: &ImageTensor, alpha: &Array3<f32>) -> Result<()> {
    if image.data().dim() != alpha.dim() {
        return Err(Error::invalid_argument(format!(
            "alpha shape {:?} does not match image shape {:?}",
            alpha.dim(),
            image.data().dim()
        )));
    }
    if !alpha
        .iter()
        .all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
    {
        return Err(Error::invalid_argument(
            "alpha values must be finite and in [-1, 1]",
        ));
    }
    Ok(())
}

fn raw_step(le: &Array3<f32>, alpha: &Array3<f32>) -> Array3<f32> {
    let mut out = le.clone();
    ndarray::azip!((o in &mut out, &a in alpha) {
        *o = *o + a * *o * (1.0 - *o);
    });
    out
}

/// One curve iteration. The result is clamped to `[0, 1]` to absorb
/// floating-point drift; interior math is exact on the domain.
pub fn apply_curve_step(image: &ImageTensor, alpha: &Array3<f32>) -> Result<ImageTensor> {
    check_step_inputs(image, alpha)?;
    ImageTensor::from_clamped(raw_step(image.data(), alpha))
}

/// Applies all iterations of `maps`; only the final result is clamped.
pub fn apply_curve(image: &ImageTensor, maps: &CurveParameterMaps) -> Result<ImageTensor> {
    let (_, h, w, _) = maps.alpha.dim();
    if (h, w) != (image.height(), image.width()) {
        return Err(Error::invalid_argument(format!(
            "map spatial shape {:?} does not match image {:?}",
            (h, w),
            (image.height(), image.width())
        )));
    }
    let mut le = image.data().clone();
    for n in 0..maps.n_iterations() {
        let alpha = maps.alpha.index_axis(Axis(0), n);
        ndarray::azip!((o in &mut le, &a in &alpha) {
            *o = *o + a * *o * (1.0 - *o);
        });
    }
    ImageTensor::from_clamped(le)
}

/// Tape version of one curve step: `le + alpha * (le - le^2)`.
pub fn curve_step_node<F: Scalar>(t: &mut Tape<F>, le: Var, alpha: Var) -> Var {
    let le_sq = t.sqr(le);
    let le_minus_sq = t.sub(le, le_sq);
    let delta = t.mul(alpha, le_minus_sq);
    t.add(le, delta)
}

/// Tape version of the full iterative curve.
pub fn apply_curve_node<F: Scalar>(t: &mut Tape<F>, image: Var, alphas: &[Var]) -> Var {
    let mut le = image;
    for &a in alphas {
        le = curve_step_node(t, le, a);
    }
    le
}

/// Runs the estimator on an image.
pub fn estimate_curves(
    image: &ImageTensor,
    params: &CurveNetworkParams,
) -> Result<CurveParameterMaps> {
    params.estimate(image)
}

/// Estimates curves and applies them, returning both the enhanced image
/// and the maps (the maps feed the smoothness loss).
pub fn enhance(
    image: &ImageTensor,
    params: &CurveNetworkParams,
) -> Result<(ImageTensor, CurveParameterMaps)> {
    let maps = params.estimate(image)?;
    let enhanced = apply_curve(image, &maps)?;
    Ok((enhanced, maps))
}
