//! Convolution, pooling, resize, normalization and attention building
//! blocks.

use ndarray::{Array1, Array2, ArrayD, Ix1, Ix2, Ix3, Ix4, IxDyn};

use crate::{kernels, Scalar, Tape, Var};

impl<F: Scalar> Tape<F> {
    /// 2-D convolution: input `[H, W, Cin]`, weight `[Kh, Kw, Cin, Cout]`,
    /// bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("conv2d input must be [H, W, C]");
        let wv = self
            .value(weight)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d weight must be [Kh, Kw, Cin, Cout]");
        let bv = self
            .value(bias)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("conv2d bias must be [Cout]");
        let y = kernels::conv2d(xv, wv, Some(bv), stride, pad);
        self.push(
            y.into_dyn(),
            vec![x, weight, bias],
            Some(Box::new(move |g, ps, _| {
                let xv = ps[0].view().into_dimensionality::<Ix3>().unwrap();
                let wv = ps[1].view().into_dimensionality::<Ix4>().unwrap();
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let grads = kernels::conv2d_backward(xv, wv, gv, stride, pad);
                vec![
                    grads.dx.into_dyn(),
                    grads.dweight.into_dyn(),
                    grads.dbias.into_dyn(),
                ]
            })),
        )
    }

    /// Non-overlapping average pooling over the leading two axes of a
    /// `[H, W]` or `[H, W, C]` node; trailing partial windows are dropped.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Var {
        let v = self.value(x);
        let ndim = v.ndim();
        assert!(ndim == 2 || ndim == 3, "avg_pool2d expects [H, W] or [H, W, C]");
        let (h, w) = (v.shape()[0], v.shape()[1]);
        let as3 = if ndim == 2 {
            v.to_owned()
                .into_shape_with_order(IxDyn(&[h, w, 1]))
                .unwrap()
        } else {
            v.to_owned()
        };
        let pooled = kernels::avg_pool2d(as3.view().into_dimensionality::<Ix3>().unwrap(), k);
        let (gh, gw, c) = pooled.dim();
        let y = if ndim == 2 {
            pooled.into_dyn().into_shape_with_order(IxDyn(&[gh, gw])).unwrap()
        } else {
            pooled.into_dyn()
        };
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let g3 = g
                    .to_owned()
                    .into_shape_with_order(IxDyn(&[gh, gw, c]))
                    .unwrap();
                let dx = kernels::avg_pool2d_backward(
                    h,
                    w,
                    k,
                    g3.view().into_dimensionality::<Ix3>().unwrap(),
                );
                let dx = dx.into_dyn();
                vec![dx.into_shape_with_order(ps[0].raw_dim()).unwrap()]
            })),
        )
    }

    /// Differentiable bilinear resize of a `[H, W, C]` node.
    pub fn bilinear_resize(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let v = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("bilinear_resize expects [H, W, C]");
        let (h, w, _) = v.dim();
        let y = kernels::bilinear_resize(v, oh, ow);
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _, _| {
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                vec![kernels::bilinear_resize_backward(h, w, gv).into_dyn()]
            })),
        )
    }

    /// Matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self
            .value(a)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul lhs must be a matrix");
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs must be a matrix");
        assert_eq!(av.dim().1, bv.dim().0, "matmul inner dimension mismatch");
        let y = av.dot(&bv);
        self.push(
            y.into_dyn(),
            vec![a, b],
            Some(Box::new(|g, ps, _| {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = ps[0].view().into_dimensionality::<Ix2>().unwrap();
                let bv = ps[1].view().into_dimensionality::<Ix2>().unwrap();
                vec![gv.dot(&bv.t()).into_dyn(), av.t().dot(&gv).into_dyn()]
            })),
        )
    }

    /// Row-wise layer normalization of a `[T, D]` node with learnable
    /// `gamma`/`beta` of shape `[D]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("layer_norm expects [T, D]");
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let (t, d) = xv.dim();
        assert!(gv.len() == d && bv.len() == d, "layer_norm width mismatch");
        let gvec: Array1<F> = gv.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let bvec: Array1<F> = bv.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let mut y = Array2::<F>::zeros((t, d));
        for r in 0..t {
            let row = xv.row(r);
            let (mu, sd) = row_moments(&row.to_owned(), eps);
            for j in 0..d {
                y[(r, j)] = (row[j] - mu) / sd * gvec[j] + bvec[j];
            }
        }
        self.push(
            y.into_dyn(),
            vec![x, gamma, beta],
            Some(Box::new(move |g, ps, _| {
                let xv = ps[0].view().into_dimensionality::<Ix2>().unwrap();
                let gammav = ps[1].view().into_dimensionality::<Ix1>().unwrap();
                let gr = g.view().into_dimensionality::<Ix2>().unwrap();
                let (t, d) = xv.dim();
                let invd = F::from_usize(d).recip();
                let mut dx = Array2::<F>::zeros((t, d));
                let mut dgamma = Array1::<F>::zeros(d);
                let mut dbeta = Array1::<F>::zeros(d);
                for r in 0..t {
                    let row = xv.row(r).to_owned();
                    let (mu, sd) = row_moments(&row, eps);
                    let xhat: Array1<F> = row.mapv(|v| (v - mu) / sd);
                    let grow = gr.row(r);
                    let dxhat: Array1<F> = (0..d).map(|j| grow[j] * gammav[j]).collect();
                    let mean_dxhat = dxhat.sum() * invd;
                    let mean_dxhat_xhat =
                        (0..d).map(|j| dxhat[j] * xhat[j]).sum::<F>() * invd;
                    for j in 0..d {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        dx[(r, j)] =
                            (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) / sd;
                    }
                }
                vec![dx.into_dyn(), dgamma.into_dyn(), dbeta.into_dyn()]
            })),
        )
    }

    /// Row-wise softmax of a `[T, D]` node.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("softmax_rows expects [T, D]");
        let (t, d) = xv.dim();
        let mut y = Array2::<F>::zeros((t, d));
        for r in 0..t {
            let row = xv.row(r);
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for j in 0..d {
                let e = (row[j] - max).exp();
                y[(r, j)] = e;
                total += e;
            }
            let inv = total.recip();
            for j in 0..d {
                y[(r, j)] *= inv;
            }
        }
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(|g, _, y| {
                let yv = y.view().into_dimensionality::<Ix2>().unwrap();
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let (t, d) = yv.dim();
                let mut dx = Array2::<F>::zeros((t, d));
                for r in 0..t {
                    let mut gy = F::zero();
                    for j in 0..d {
                        gy += gv[(r, j)] * yv[(r, j)];
                    }
                    for j in 0..d {
                        dx[(r, j)] = yv[(r, j)] * (gv[(r, j)] - gy);
                    }
                }
                vec![dx.into_dyn()]
            })),
        )
    }

    /// Looks up rows of an embedding table: `[V, D]` gathered at `ids`
    /// yields `[T, D]`. Gradient scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let tv = self
            .value(table)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("gather_rows expects [V, D]");
        let (v, d) = tv.dim();
        assert!(ids.iter().all(|&i| i < v), "token id out of range");
        let mut y = Array2::<F>::zeros((ids.len(), d));
        for (r, &id) in ids.iter().enumerate() {
            y.row_mut(r).assign(&tv.row(id));
        }
        self.push(
            y.into_dyn(),
            vec![table],
            Some(Box::new(move |g, ps, _| {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut dt = ArrayD::<F>::zeros(ps[0].raw_dim());
                {
                    let mut dt2 = dt.view_mut().into_dimensionality::<Ix2>().unwrap();
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = dt2.row_mut(id);
                        row += &gv.row(r);
                    }
                }
                vec![dt]
            })),
        )
    }
}

fn row_moments<F: Scalar>(row: &Array1<F>, eps: F) -> (F, F) {
    let d = row.len();
    let invd = F::from_usize(d).recip();
    let mu = row.sum() * invd;
    let var = row.mapv(|v| (v - mu) * (v - mu)).sum() * invd;
    (mu, (var + eps).sqrt())
}
