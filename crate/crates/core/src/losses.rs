//! The four zero-reference enhancement losses: exposure control, spatial
//! consistency, gray-world color constancy and illumination smoothness.
//!
//! Each loss has a tape builder (generic over the element type, used by
//! training and gradient checks) and a plain wrapper returning a
//! [`LossValue`].

use nocturne_autograd::{Scalar, Tape, Var};

use crate::curve::CurveParameterMaps;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Exposure control settings: non-overlapping patch size and the expected
/// average patch intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureConfig {
    pub patch_size: usize,
    pub target: f32,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        ExposureConfig {
            patch_size: 16,
            target: 0.6,
        }
    }
}

impl ExposureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("exposure patch size must be >= 1"));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::config("exposure target must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Spatial consistency settings: pooled region size.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConfig {
    pub region_size: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig { region_size: 4 }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.region_size == 0 {
            return Err(Error::config("spatial region size must be >= 1"));
        }
        Ok(())
    }
}

/// A finite, non-negative scalar loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue(f32);

impl LossValue {
    pub fn new(value: f32) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid_state(format!(
                "loss must be finite and non-negative, got {value}"
            )));
        }
        Ok(LossValue(value))
    }

    pub fn value(self) -> f32 {
        self.0
    }
}

impl std::fmt::Display for LossValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Mean over the non-overlapping patch grid of |mean(patch) - target|.
/// Patch intensity averages all pixels and the three channels; trailing
/// partial patches are dropped.
pub fn exposure_loss_node<F: Scalar>(
    t: &mut Tape<F>,
    enhanced: Var,
    patch_size: usize,
    target: F,
) -> Var {
    let gray = t.channel_mean(enhanced);
    let pooled = t.avg_pool2d(gray, patch_size);
    let centered = t.affine(pooled, F::one(), -target);
    let dev = t.abs(centered);
    t.mean(dev)
}

/// Both images are reduced to channel means and pooled into region means;
/// for every ordered pair of 4-connected regions the squared difference of
/// |region gaps| is accumulated and averaged over the region count.
pub fn spatial_loss_node<F: Scalar>(
    t: &mut Tape<F>,
    enhanced: Var,
    input: Var,
    region_size: usize,
) -> Var {
    let pe = {
        let g = t.channel_mean(enhanced);
        t.avg_pool2d(g, region_size)
    };
    let pi = {
        let g = t.channel_mean(input);
        t.avg_pool2d(g, region_size)
    };
    let regions = t.value(pe).len();
    let mut axis_sums = Vec::with_capacity(2);
    for axis in 0..2 {
        // forward_diff leaves the trailing slot zero on both sides, so it
        // contributes nothing to the sum.
        let de = t.forward_diff(pe, axis);
        let di = t.forward_diff(pi, axis);
        let ae = t.abs(de);
        let ai = t.abs(di);
        let gap = t.sub(ae, ai);
        let sq = t.sqr(gap);
        axis_sums.push(t.sum(sq));
    }
    let unordered = t.add(axis_sums[0], axis_sums[1]);
    // each unordered neighbour pair appears twice in the ordered sum
    t.affine(unordered, F::from_f64(2.0 / regions as f64), F::zero())
}

/// Gray-world color constancy: squared pairwise differences of the three
/// global channel means.
pub fn color_loss_node<F: Scalar>(t: &mut Tape<F>, enhanced: Var) -> Var {
    let mu = t.channel_means(enhanced);
    let r = t.element(mu, 0);
    let g = t.element(mu, 1);
    let b = t.element(mu, 2);
    let rg = t.sub(r, g);
    let rb = t.sub(r, b);
    let gb = t.sub(g, b);
    let rg2 = t.sqr(rg);
    let rb2 = t.sqr(rb);
    let gb2 = t.sqr(gb);
    t.add_n(&[rg2, rb2, gb2])
}

/// Total-variation smoothness of the curve maps: per iteration slice,
/// squared horizontal plus vertical forward differences summed over
/// channels, averaged over pixels and slices. No wrap-around; the
/// trailing row/column contributes zero.
///
/// The directional terms are squared separately (no `|dx||dy|` cross
/// term), which keeps the loss exactly invariant to flipping the maps
/// and matches the established curve-estimation baseline.
pub fn smoothness_loss_node<F: Scalar>(t: &mut Tape<F>, alpha_slices: &[Var]) -> Var {
    assert!(!alpha_slices.is_empty(), "smoothness loss needs at least one slice");
    let shape = t.value(alpha_slices[0]).shape().to_vec();
    let (h, w) = (shape[0], shape[1]);
    let mut totals = Vec::with_capacity(alpha_slices.len());
    for &slice in alpha_slices {
        let dy = t.forward_diff(slice, 0);
        let dx = t.forward_diff(slice, 1);
        let dy2 = t.sqr(dy);
        let dx2 = t.sqr(dx);
        let s = t.add(dx2, dy2);
        totals.push(t.sum(s));
    }
    let total = t.add_n(&totals);
    let scale = F::from_f64(1.0 / (alpha_slices.len() * h * w) as f64);
    t.affine(total, scale, F::zero())
}

pub fn exposure_loss(enhanced: &ImageTensor, cfg: &ExposureConfig) -> Result<LossValue> {
    cfg.validate()?;
    if enhanced.height() < cfg.patch_size || enhanced.width() < cfg.patch_size {
        return Err(Error::invalid_argument(format!(
            "image {}x{} smaller than one {} px exposure patch",
            enhanced.height(),
            enhanced.width(),
            cfg.patch_size
        )));
    }
    let mut t = Tape::<f32>::new();
    let e = t.leaf(enhanced.data().clone().into_dyn());
    let loss = exposure_loss_node(&mut t, e, cfg.patch_size, cfg.target);
    LossValue::new(t.scalar_value(loss))
}

pub fn spatial_consistency_loss(
    enhanced: &ImageTensor,
    input: &ImageTensor,
    cfg: &SpatialConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    if enhanced.data().dim() != input.data().dim() {
        return Err(Error::invalid_argument(format!(
            "enhanced {:?} and input {:?} shapes differ",
            enhanced.data().dim(),
            input.data().dim()
        )));
    }
    if enhanced.height() < cfg.region_size || enhanced.width() < cfg.region_size {
        return Err(Error::invalid_argument(format!(
            "image {}x{} smaller than one {} px region",
            enhanced.height(),
            enhanced.width(),
            cfg.region_size
        )));
    }
    let mut t = Tape::<f32>::new();
    let e = t.leaf(enhanced.data().clone().into_dyn());
    let i = t.leaf(input.data().clone().into_dyn());
    let loss = spatial_loss_node(&mut t, e, i, cfg.region_size);
    LossValue::new(t.scalar_value(loss))
}

pub fn color_constancy_loss(enhanced: &ImageTensor) -> Result<LossValue> {
    let mut t = Tape::<f32>::new();
    let e = t.leaf(enhanced.data().clone().into_dyn());
    let loss = color_loss_node(&mut t, e);
    LossValue::new(t.scalar_value(loss))
}

pub fn illumination_smoothness_loss(maps: &CurveParameterMaps) -> Result<LossValue> {
    let mut t = Tape::<f32>::new();
    let slices: Vec<Var> = (0..maps.n_iterations())
        .map(|n| t.leaf(maps.slice(n).into_dyn()))
        .collect();
    let loss = smoothness_loss_node(&mut t, &slices);
    LossValue::new(t.scalar_value(loss))
}
