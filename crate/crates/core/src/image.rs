//! Image tensors: `H x W x 3` arrays of RGB intensities in `[0, 1]`.

use std::path::Path;

use ndarray::{Array3, ArrayView3};
use nocturne_autograd::kernels;

use crate::error::{Error, Result};

/// An RGB image with intensities in `[0, 1]`, channel order R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    /// Validates range and finiteness of `data` (`[H, W, 3]`).
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid_argument("image must have positive size"));
        }
        if c != 3 {
            return Err(Error::invalid_argument(format!(
                "image must have 3 channels, got {c}"
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::invalid_argument(
                "image intensities must be finite and in [0, 1]",
            ));
        }
        Ok(ImageTensor { data })
    }

    /// Clamps `data` into `[0, 1]` before wrapping. Non-finite values are
    /// still rejected.
    pub fn from_clamped(data: Array3<f32>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_argument("image intensities must be finite"));
        }
        Self::new(data.mapv(|v| v.clamp(0.0, 1.0)))
    }

    pub fn constant(h: usize, w: usize, value: f32) -> Result<Self> {
        Self::new(Array3::from_elem((h, w, 3), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Mean intensity over all pixels and channels.
    pub fn mean_brightness(&self) -> f32 {
        let n = self.data.len() as f64;
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&self, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid_argument("resize target must be positive"));
        }
        Self::from_clamped(kernels::bilinear_resize(self.view(), h, w))
    }

    /// Decodes a PNG or JPEG file; intensities become `v / 255`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                detail: format!("image decode failed: {e}"),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut data = Array3::<f32>::zeros((h as usize, w as usize, 3));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(y as usize, x as usize, c)] = px.0[c] as f32 / 255.0;
            }
        }
        Self::new(data)
    }

    /// Encodes to the format implied by the file extension (PNG or JPEG).
    /// Quantization uses round-half-up: `floor(v * 255 + 0.5)`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = (self.height(), self.width());
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    quantize(self.data[(y, x, 0)]),
                    quantize(self.data[(y, x, 1)]),
                    quantize(self.data[(y, x, 2)]),
                ];
                buf.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        buf.save(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
    }
}

/// Round-half-up quantization to 8 bits.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// RGB (each in `[0, 1]`) to HSV with hue in turns `[0, 1)`.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// Inverse of [`rgb_to_hsv`].
pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        let mut a = Array3::<f32>::zeros((2, 2, 3));
        a[(0, 0, 0)] = 1.5;
        assert!(matches!(
            ImageTensor::new(a),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rejects_nan() {
        let mut a = Array3::<f32>::zeros((2, 2, 3));
        a[(1, 1, 2)] = f32::NAN;
        assert!(ImageTensor::new(a).is_err());
    }

    #[test]
    fn rejects_zero_area() {
        let a = Array3::<f32>::zeros((0, 4, 3));
        assert!(ImageTensor::new(a).is_err());
    }

    #[test]
    fn quantize_rounds_half_up() {
        // 127.5/255 maps exactly to the .5 boundary
        assert_eq!(quantize(127.5 / 255.0), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = ImageTensor::new(Array3::from_shape_fn((4, 5, 3), |(y, x, c)| {
            ((y * 41 + x * 17 + c * 73) % 256) as f32 / 255.0
        }))
        .unwrap();
        img.save(&path).unwrap();
        let back = ImageTensor::load(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[
            (0.2f32, 0.4f32, 0.8f32),
            (0.9, 0.1, 0.3),
            (0.5, 0.5, 0.5),
            (0.0, 0.0, 0.0),
            (1.0, 1.0, 0.0),
        ] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5, "{r} vs {r2}");
            assert!((g - g2).abs() < 1e-5);
            assert!((b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn mean_brightness_of_constant() {
        let img = ImageTensor::constant(3, 3, 0.25).unwrap();
        assert!((img.mean_brightness() - 0.25).abs() < 1e-7);
    }
}
