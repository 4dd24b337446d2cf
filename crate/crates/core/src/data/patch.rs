//! Class-labeled training-patch extraction with small-object context
//! expansion.

use ndarray::{Axis, Slice};

use crate::data::BoundingBox;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const DEFAULT_PATCH_SIZE: usize = 224;
/// Boxes smaller than this per side get surrounding context.
pub const DEFAULT_MIN_CONTEXT: usize = 64;

/// Clamps a centered interval `[c - len/2, c + len/2)` into `[0, limit)`.
fn centered_span(center: f32, len: f32, limit: f32) -> (f32, f32) {
    let len = len.min(limit);
    let start = (center - len / 2.0).clamp(0.0, limit - len);
    (start, len)
}

/// Crops around a bounding box and resizes to `out_size`.
///
/// Small boxes (both sides under `min_context`) are grown to
/// `min_context` per side around their center; the shorter side is then
/// expanded to make the window square where the image allows. The window
/// is always clamped to the image.
pub fn extract_patch(
    image: &ImageTensor,
    bbox: &BoundingBox,
    out_size: usize,
    min_context: usize,
) -> Result<ImageTensor> {
    if out_size == 0 {
        return Err(Error::invalid_argument("patch size must be positive"));
    }
    let (img_h, img_w) = (image.height() as f32, image.width() as f32);
    let bbox = bbox
        .clamped(img_w, img_h)
        .ok_or_else(|| Error::invalid_argument("bounding box has zero area after clamping"))?;

    let (cx, cy) = (bbox.x + bbox.w / 2.0, bbox.y + bbox.h / 2.0);
    let (mut w, mut h) = (bbox.w, bbox.h);
    if w.max(h) < min_context as f32 {
        w = min_context as f32;
        h = min_context as f32;
    }
    // square where possible
    let side = w.max(h);
    let (x0, w) = centered_span(cx, side.max(w), img_w);
    let (y0, h) = centered_span(cy, side.max(h), img_h);

    let yi = (y0.round() as usize).min(image.height() - 1);
    let xi = (x0.round() as usize).min(image.width() - 1);
    let hh = (h.round() as usize).clamp(1, image.height() - yi);
    let ww = (w.round() as usize).clamp(1, image.width() - xi);

    let crop = image
        .data()
        .slice_axis(Axis(0), Slice::from(yi..yi + hh))
        .slice_axis(Axis(1), Slice::from(xi..xi + ww))
        .to_owned();
    ImageTensor::new(crop)?.resize(out_size, out_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            (((y * 31 + x * 17 + c * 5) % 256) as f32) / 255.0
        }))
        .unwrap()
    }

    #[test]
    fn exact_size_box_is_identity() {
        let img = gradient_image(300, 400);
        let bbox = BoundingBox {
            x: 50.0,
            y: 40.0,
            w: 224.0,
            h: 224.0,
        };
        let patch = extract_patch(&img, &bbox, 224, 64).unwrap();
        for y in 0..224 {
            for x in 0..224 {
                for c in 0..3 {
                    assert_eq!(
                        patch.data()[(y, x, c)],
                        img.data()[(y + 40, x + 50, c)],
                        "mismatch at {y},{x},{c}"
                    );
                }
            }
        }
    }

    #[test]
    fn tiny_box_gets_context_window() {
        let img = gradient_image(512, 512);
        let bbox = BoundingBox {
            x: 250.0,
            y: 250.0,
            w: 10.0,
            h: 10.0,
        };
        // the 64x64 context window is distinguishable from a 10x10 crop:
        // its corner pixel comes from (223, 223), not (250, 250)
        let patch = extract_patch(&img, &bbox, 64, 64).unwrap();
        assert_eq!(patch.data()[(0, 0, 0)], img.data()[(223, 223, 0)]);
    }

    #[test]
    fn corner_box_is_clamped_and_sized() {
        let img = gradient_image(100, 100);
        let bbox = BoundingBox {
            x: 0.0,
            y: 0.0,
            w: 5.0,
            h: 5.0,
        };
        let patch = extract_patch(&img, &bbox, 224, 64).unwrap();
        assert_eq!(patch.height(), 224);
        assert_eq!(patch.width(), 224);
        // window starts at the corner
        assert_eq!(patch.data()[(0, 0, 0)], img.data()[(0, 0, 0)]);
    }

    #[test]
    fn rectangular_box_is_squared() {
        let img = gradient_image(400, 400);
        let bbox = BoundingBox {
            x: 100.0,
            y: 150.0,
            w: 200.0,
            h: 80.0,
        };
        // squared window: 200x200 centered at the box center (200, 190)
        let patch = extract_patch(&img, &bbox, 200, 64).unwrap();
        assert_eq!(patch.data()[(0, 0, 0)], img.data()[(90, 100, 0)]);
    }

    #[test]
    fn zero_area_box_is_invalid_argument() {
        let img = gradient_image(64, 64);
        let bbox = BoundingBox {
            x: 70.0,
            y: 70.0,
            w: 10.0,
            h: 10.0,
        };
        assert!(matches!(
            extract_patch(&img, &bbox, 224, 64),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn output_is_always_requested_size_and_in_range() {
        let img = gradient_image(123, 77);
        for (x, y, w, h) in [(0.0, 0.0, 3.0, 3.0), (70.0, 100.0, 7.0, 30.0), (10.0, 5.0, 60.0, 110.0)] {
            let bbox = BoundingBox { x, y, w, h };
            let patch = extract_patch(&img, &bbox, 96, 64).unwrap();
            assert_eq!((patch.height(), patch.width()), (96, 96));
            assert!(patch
                .data()
                .iter()
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
