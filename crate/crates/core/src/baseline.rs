//! Global histogram equalization on the luma channel, chroma preserved.
//! A classical enhancement reference point, no training involved.

use ndarray::Array3;

use crate::error::Result;
use crate::image::ImageTensor;

const BINS: usize = 256;

// BT.601 luma/chroma conversion
fn rgb_to_ycbcr(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
    let cr = 0.5 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    (y, cb, cr)
}

fn ycbcr_to_rgb(y: f32, cb: f32, cr: f32) -> (f32, f32, f32) {
    let r = y + 1.402 * (cr - 0.5);
    let g = y - 0.344_136 * (cb - 0.5) - 0.714_136 * (cr - 0.5);
    let b = y + 1.772 * (cb - 0.5);
    (r, g, b)
}

/// Remaps luma through the empirical CDF of its 256-bin histogram:
/// `y' = (cdf(y) - cdf_min) / (total - cdf_min)`. A degenerate CDF (all
/// mass in one bin) returns the input unchanged.
pub fn histogram_equalization(image: &ImageTensor) -> Result<ImageTensor> {
    let (h, w) = (image.height(), image.width());
    let data = image.data();

    let mut luma = vec![0.0f32; h * w];
    let mut hist = [0u64; BINS];
    for y in 0..h {
        for x in 0..w {
            let (ly, _, _) = rgb_to_ycbcr(data[(y, x, 0)], data[(y, x, 1)], data[(y, x, 2)]);
            let ly = ly.clamp(0.0, 1.0);
            luma[y * w + x] = ly;
            hist[bin_of(ly)] += 1;
        }
    }

    let total = (h * w) as u64;
    let mut cdf = [0u64; BINS];
    let mut run = 0u64;
    for (i, &c) in hist.iter().enumerate() {
        run += c;
        cdf[i] = run;
    }
    let cdf_min = *cdf.iter().find(|&&c| c > 0).unwrap_or(&0);
    if cdf_min == total {
        // single occupied bin: nothing to equalize
        return Ok(image.clone());
    }
    let denom = (total - cdf_min) as f32;
    let map = |ly: f32| -> f32 { (cdf[bin_of(ly)].saturating_sub(cdf_min)) as f32 / denom };

    let mut out = Array3::<f32>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let (_, cb, cr) = rgb_to_ycbcr(data[(y, x, 0)], data[(y, x, 1)], data[(y, x, 2)]);
            let ny = map(luma[y * w + x]);
            let (r, g, b) = ycbcr_to_rgb(ny, cb, cr);
            out[(y, x, 0)] = r.clamp(0.0, 1.0);
            out[(y, x, 1)] = g.clamp(0.0, 1.0);
            out[(y, x, 2)] = b.clamp(0.0, 1.0);
        }
    }
    ImageTensor::new(out)
}

fn bin_of(v: f32) -> usize {
    ((v * BINS as f32) as usize).min(BINS - 1)
}
