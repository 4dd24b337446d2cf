//! Plain tensor kernels shared by the tape operators and by inference
//! paths that do not need gradients.
//!
//! Image-like tensors are `[H, W, C]`; convolution weights are
//! `[Kh, Kw, Cin, Cout]`.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};

use crate::Scalar;

/// im2col tile size in output pixels; bounds peak memory on large images.
const TILE_PX: usize = 16_384;

pub fn conv2d_out_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    assert!(stride >= 1, "stride must be >= 1");
    assert!(
        h + 2 * pad >= kh && w + 2 * pad >= kw,
        "input {}x{} too small for {}x{} kernel with pad {}",
        h,
        w,
        kh,
        kw,
        pad
    );
    ((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1)
}

fn weight_matrix<F: Scalar>(weight: &ArrayView4<F>) -> Array2<F> {
    let (kh, kw, cin, cout) = weight.dim();
    weight
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((kh * kw * cin, cout))
        .expect("weight reshape")
}

#[allow(clippy::too_many_arguments)]
fn fill_col<F: Scalar>(
    x: &ArrayView3<F>,
    start_px: usize,
    len: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    wo: usize,
    col: &mut Array2<F>,
) {
    let (h, w, cin) = x.dim();
    for r in 0..len {
        let px = start_px + r;
        let (oy, ox) = (px / wo, px % wo);
        let iy0 = (oy * stride) as isize - pad as isize;
        let ix0 = (ox * stride) as isize - pad as isize;
        let mut row = col.row_mut(r);
        let mut c = 0usize;
        for ky in 0..kh {
            let iy = iy0 + ky as isize;
            for kx in 0..kw {
                let ix = ix0 + kx as isize;
                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                    let src = x.slice(s![iy as usize, ix as usize, ..]);
                    for ci in 0..cin {
                        row[c + ci] = src[ci];
                    }
                } else {
                    for ci in 0..cin {
                        row[c + ci] = F::zero();
                    }
                }
                c += cin;
            }
        }
    }
}

/// 2-D convolution over an `[H, W, Cin]` tensor.
pub fn conv2d<F: Scalar>(
    x: ArrayView3<F>,
    weight: ArrayView4<F>,
    bias: Option<ArrayView1<F>>,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let (h, w, cin) = x.dim();
    let (kh, kw, wcin, cout) = weight.dim();
    assert_eq!(cin, wcin, "conv2d channel mismatch");
    let (ho, wo) = conv2d_out_dims(h, w, kh, kw, stride, pad);
    let wmat = weight_matrix(&weight);
    let patch = kh * kw * cin;
    let total = ho * wo;
    let mut out = Array3::<F>::zeros((ho, wo, cout));
    let mut col = Array2::<F>::zeros((TILE_PX.min(total), patch));
    let mut start = 0usize;
    while start < total {
        let len = TILE_PX.min(total - start);
        fill_col(&x, start, len, kh, kw, stride, pad, wo, &mut col);
        let prod = col.slice(s![0..len, ..]).dot(&wmat);
        for r in 0..len {
            let px = start + r;
            out.slice_mut(s![px / wo, px % wo, ..]).assign(&prod.row(r));
        }
        start += len;
    }
    if let Some(b) = bias {
        assert_eq!(b.len(), cout, "conv2d bias length mismatch");
        out += &b.broadcast((ho, wo, cout)).expect("bias broadcast");
    }
    out
}

pub struct Conv2dGrads<F> {
    pub dx: Array3<F>,
    pub dweight: Array4<F>,
    pub dbias: Array1<F>,
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<F: Scalar>(
    x: ArrayView3<F>,
    weight: ArrayView4<F>,
    dout: ArrayView3<F>,
    stride: usize,
    pad: usize,
) -> Conv2dGrads<F> {
    let (h, w, cin) = x.dim();
    let (kh, kw, _, cout) = weight.dim();
    let (ho, wo, dcout) = dout.dim();
    assert_eq!(cout, dcout, "conv2d_backward channel mismatch");
    let wmat = weight_matrix(&weight);
    let patch = kh * kw * cin;
    let total = ho * wo;

    let mut dx = Array3::<F>::zeros((h, w, cin));
    let mut dwmat = Array2::<F>::zeros((patch, cout));
    let mut col = Array2::<F>::zeros((TILE_PX.min(total), patch));
    let mut dout_tile = Array2::<F>::zeros((TILE_PX.min(total), cout));

    let mut start = 0usize;
    while start < total {
        let len = TILE_PX.min(total - start);
        fill_col(&x, start, len, kh, kw, stride, pad, wo, &mut col);
        for r in 0..len {
            let px = start + r;
            dout_tile
                .row_mut(r)
                .assign(&dout.slice(s![px / wo, px % wo, ..]));
        }
        let col_t = col.slice(s![0..len, ..]);
        let dout_t = dout_tile.slice(s![0..len, ..]);
        dwmat += &col_t.t().dot(&dout_t);
        let dcol = dout_t.dot(&wmat.t());
        // col2im scatter
        for r in 0..len {
            let px = start + r;
            let (oy, ox) = (px / wo, px % wo);
            let iy0 = (oy * stride) as isize - pad as isize;
            let ix0 = (ox * stride) as isize - pad as isize;
            let drow = dcol.row(r);
            let mut c = 0usize;
            for ky in 0..kh {
                let iy = iy0 + ky as isize;
                for kx in 0..kw {
                    let ix = ix0 + kx as isize;
                    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                        let mut dst = dx.slice_mut(s![iy as usize, ix as usize, ..]);
                        for ci in 0..cin {
                            dst[ci] += drow[c + ci];
                        }
                    }
                    c += cin;
                }
            }
        }
        start += len;
    }

    let dweight = dwmat
        .into_shape_with_order((kh, kw, cin, cout))
        .expect("dweight reshape");
    let dbias = dout.sum_axis(Axis(0)).sum_axis(Axis(0));
    Conv2dGrads {
        dx,
        dweight,
        dbias,
    }
}

/// Non-overlapping average pooling; trailing partial windows are dropped.
pub fn avg_pool2d<F: Scalar>(x: ArrayView3<F>, k: usize) -> Array3<F> {
    assert!(k >= 1, "pool size must be >= 1");
    let (h, w, c) = x.dim();
    let (gh, gw) = (h / k, w / k);
    assert!(gh >= 1 && gw >= 1, "image smaller than one pooling window");
    let inv = F::from_usize(k * k).recip();
    let mut out = Array3::<F>::zeros((gh, gw, c));
    for gy in 0..gh {
        for gx in 0..gw {
            for ci in 0..c {
                let mut acc = F::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc += x[(gy * k + dy, gx * k + dx, ci)];
                    }
                }
                out[(gy, gx, ci)] = acc * inv;
            }
        }
    }
    out
}

pub fn avg_pool2d_backward<F: Scalar>(
    in_h: usize,
    in_w: usize,
    k: usize,
    dout: ArrayView3<F>,
) -> Array3<F> {
    let (gh, gw, c) = dout.dim();
    let inv = F::from_usize(k * k).recip();
    let mut dx = Array3::<F>::zeros((in_h, in_w, c));
    for gy in 0..gh {
        for gx in 0..gw {
            for ci in 0..c {
                let g = dout[(gy, gx, ci)] * inv;
                for dy in 0..k {
                    for dx_ in 0..k {
                        dx[(gy * k + dy, gx * k + dx_, ci)] = g;
                    }
                }
            }
        }
    }
    dx
}

/// Stride-`m` nearest subsampling starting at offset 0.
pub fn subsample2d<F: Scalar>(x: ArrayView3<F>, m: usize) -> Array3<F> {
    assert!(m >= 1);
    x.slice(s![..;m, ..;m, ..]).to_owned()
}

#[inline]
fn resize_coords(o: usize, scale: f64, limit: usize) -> (usize, usize, f64) {
    let s = (o as f64 + 0.5) * scale - 0.5;
    let s = s.max(0.0);
    let i0 = (s.floor() as usize).min(limit - 1);
    let i1 = (i0 + 1).min(limit - 1);
    let t = (s - i0 as f64).clamp(0.0, 1.0);
    (i0, i1, t)
}

/// Bilinear resize with half-pixel centers and clamp-to-edge sampling.
/// Equal input/output sizes reproduce the input exactly.
pub fn bilinear_resize<F: Scalar>(x: ArrayView3<F>, oh: usize, ow: usize) -> Array3<F> {
    let (h, w, c) = x.dim();
    assert!(h >= 1 && w >= 1 && oh >= 1 && ow >= 1);
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Array3::<F>::zeros((oh, ow, c));
    for oy in 0..oh {
        let (y0, y1, ty) = resize_coords(oy, sy, h);
        for ox in 0..ow {
            let (x0, x1, tx) = resize_coords(ox, sx, w);
            let (w00, w01, w10, w11) = (
                (1.0 - ty) * (1.0 - tx),
                (1.0 - ty) * tx,
                ty * (1.0 - tx),
                ty * tx,
            );
            for ci in 0..c {
                let v = x[(y0, x0, ci)].to_f64() * w00
                    + x[(y0, x1, ci)].to_f64() * w01
                    + x[(y1, x0, ci)].to_f64() * w10
                    + x[(y1, x1, ci)].to_f64() * w11;
                out[(oy, ox, ci)] = F::from_f64(v);
            }
        }
    }
    out
}

pub fn bilinear_resize_backward<F: Scalar>(
    in_h: usize,
    in_w: usize,
    dout: ArrayView3<F>,
) -> Array3<F> {
    let (oh, ow, c) = dout.dim();
    let sy = in_h as f64 / oh as f64;
    let sx = in_w as f64 / ow as f64;
    let mut dx = Array3::<F>::zeros((in_h, in_w, c));
    for oy in 0..oh {
        let (y0, y1, ty) = resize_coords(oy, sy, in_h);
        for ox in 0..ow {
            let (x0, x1, tx) = resize_coords(ox, sx, in_w);
            let (w00, w01, w10, w11) = (
                (1.0 - ty) * (1.0 - tx),
                (1.0 - ty) * tx,
                ty * (1.0 - tx),
                ty * tx,
            );
            for ci in 0..c {
                let g = dout[(oy, ox, ci)];
                dx[(y0, x0, ci)] += g * F::from_f64(w00);
                dx[(y0, x1, ci)] += g * F::from_f64(w01);
                dx[(y1, x0, ci)] += g * F::from_f64(w10);
                dx[(y1, x1, ci)] += g * F::from_f64(w11);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn conv2d_identity_kernel() {
        let x = Array3::from_shape_fn((4, 5, 2), |(y, x, c)| (y * 10 + x * 2 + c) as f64);
        // 1x1 kernel copying channel c -> c
        let mut w = Array4::<f64>::zeros((1, 1, 2, 2));
        w[(0, 0, 0, 0)] = 1.0;
        w[(0, 0, 1, 1)] = 1.0;
        let y = conv2d(x.view(), w.view(), None, 1, 0);
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_known_sum() {
        // 3x3 all-ones kernel with pad 1 computes neighbourhood sums.
        let x = Array3::from_elem((3, 3, 1), 1.0f64);
        let w = Array4::from_elem((3, 3, 1, 1), 1.0f64);
        let y = conv2d(x.view(), w.view(), Some(arr1(&[0.5]).view()), 1, 1);
        assert_eq!(y.dim(), (3, 3, 1));
        assert_eq!(y[(1, 1, 0)], 9.5);
        assert_eq!(y[(0, 0, 0)], 4.5);
        assert_eq!(y[(0, 1, 0)], 6.5);
    }

    #[test]
    fn conv2d_stride_matches_patch_embed() {
        let x = Array3::from_shape_fn((4, 4, 1), |(y, x, _)| (y * 4 + x) as f64);
        let w = Array4::from_elem((2, 2, 1, 1), 1.0f64);
        let y = conv2d(x.view(), w.view(), None, 2, 0);
        assert_eq!(y.dim(), (2, 2, 1));
        assert_eq!(y[(0, 0, 0)], 0.0 + 1.0 + 4.0 + 5.0);
        assert_eq!(y[(1, 1, 0)], 10.0 + 11.0 + 14.0 + 15.0);
    }

    #[test]
    fn pool_drops_partial_windows() {
        let x = Array3::from_shape_fn((5, 7, 1), |(y, x, _)| (y * 7 + x) as f64);
        let y = avg_pool2d(x.view(), 2);
        assert_eq!(y.dim(), (2, 3, 1));
        assert_eq!(y[(0, 0, 0)], (0.0 + 1.0 + 7.0 + 8.0) / 4.0);
    }

    #[test]
    fn subsample_takes_offset_zero() {
        let x = Array3::from_shape_fn((4, 4, 1), |(y, x, _)| (y * 4 + x) as f64);
        let y = subsample2d(x.view(), 2);
        assert_eq!(y.dim(), (2, 2, 1));
        assert_eq!(y[(0, 0, 0)], 0.0);
        assert_eq!(y[(1, 1, 0)], 10.0);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let x = Array3::from_shape_fn((3, 4, 2), |(y, x, c)| (y * 8 + x * 2 + c) as f64);
        let y = bilinear_resize(x.view(), 3, 4);
        assert_eq!(y, x);
    }

    #[test]
    fn resize_downscale_averages() {
        let x = Array3::from_shape_vec((1, 2, 1), vec![0.0f64, 1.0]).unwrap();
        let y = bilinear_resize(x.view(), 1, 1);
        assert!((y[(0, 0, 0)] - 0.5).abs() < 1e-12);
    }
}
