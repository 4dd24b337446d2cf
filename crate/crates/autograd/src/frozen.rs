//! Operators over frozen (shared, non-trainable) weights.
//!
//! These mirror their trainable counterparts but capture the weight as an
//! `Arc` instead of recording it as a node: no value copy onto the tape
//! and no weight gradients in the backward sweep.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, Ix1, Ix2, Ix3, Ix4};

use crate::{kernels, Scalar, Tape, Var};

impl<F: Scalar> Tape<F> {
    /// `x [T, k] . w [k, n]` with a frozen right-hand side.
    pub fn matmul_frozen(&mut self, x: Var, w: Arc<ArrayD<F>>) -> Var {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul_frozen lhs must be a matrix");
        let wv = w
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul_frozen rhs must be a matrix");
        assert_eq!(xv.dim().1, wv.dim().0, "matmul_frozen inner dimension");
        let y = xv.dot(&wv);
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(move |g, _, _| {
                let gv = g.view().into_dimensionality::<Ix2>().unwrap();
                let wv = w.view().into_dimensionality::<Ix2>().unwrap();
                vec![gv.dot(&wv.t()).into_dyn()]
            })),
        )
    }

    /// Adds a frozen tensor of identical shape.
    pub fn add_frozen(&mut self, x: Var, c: Arc<ArrayD<F>>) -> Var {
        assert_eq!(self.value(x).shape(), c.shape(), "add_frozen shape mismatch");
        let y = self.value(x) + c.as_ref();
        self.push(y, vec![x], Some(Box::new(|g, _, _| vec![g.clone()])))
    }

    /// Adds a frozen `[D]` row vector to every row of `[T, D]`.
    pub fn add_row_frozen(&mut self, x: Var, v: Arc<ArrayD<F>>) -> Var {
        let xs = self.value(x);
        assert_eq!(xs.ndim(), 2, "add_row_frozen expects a matrix");
        assert_eq!(xs.shape()[1], v.len(), "add_row_frozen width mismatch");
        let y = xs + &v.view().broadcast(xs.raw_dim()).expect("row broadcast");
        self.push(y, vec![x], Some(Box::new(|g, _, _| vec![g.clone()])))
    }

    /// Convolution with frozen weight/bias.
    pub fn conv2d_frozen(
        &mut self,
        x: Var,
        weight: Arc<ArrayD<F>>,
        bias: Option<Arc<ArrayD<F>>>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix3>()
            .expect("conv2d_frozen input must be [H, W, C]");
        let wv = weight
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d_frozen weight must be [Kh, Kw, Cin, Cout]");
        let bv = bias
            .as_ref()
            .map(|b| b.view().into_dimensionality::<Ix1>().expect("bias rank"));
        let y = kernels::conv2d(xv, wv, bv, stride, pad);
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let xv = ps[0].view().into_dimensionality::<Ix3>().unwrap();
                let wv = weight.view().into_dimensionality::<Ix4>().unwrap();
                let gv = g.view().into_dimensionality::<Ix3>().unwrap();
                let grads = kernels::conv2d_backward(xv, wv, gv, stride, pad);
                vec![grads.dx.into_dyn()]
            })),
        )
    }

    /// Layer normalization with frozen scale/shift.
    pub fn layer_norm_frozen(
        &mut self,
        x: Var,
        gamma: Arc<ArrayD<F>>,
        beta: Arc<ArrayD<F>>,
        eps: F,
    ) -> Var {
        let xv = self
            .value(x)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("layer_norm_frozen expects [T, D]");
        let (t_rows, d) = xv.dim();
        assert!(gamma.len() == d && beta.len() == d, "layer_norm width mismatch");
        let mut y = Array2::<F>::zeros((t_rows, d));
        for r in 0..t_rows {
            let row = xv.row(r);
            let (mu, sd) = moments(row.iter().cloned(), d, eps);
            for j in 0..d {
                let gj = gamma.as_slice().unwrap()[j];
                let bj = beta.as_slice().unwrap()[j];
                y[(r, j)] = (row[j] - mu) / sd * gj + bj;
            }
        }
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let xv = ps[0].view().into_dimensionality::<Ix2>().unwrap();
                let gr = g.view().into_dimensionality::<Ix2>().unwrap();
                let (t_rows, d) = xv.dim();
                let invd = F::from_usize(d).recip();
                let gslice = gamma.as_slice().unwrap();
                let mut dx = Array2::<F>::zeros((t_rows, d));
                for r in 0..t_rows {
                    let row = xv.row(r);
                    let (mu, sd) = moments(row.iter().cloned(), d, eps);
                    let mut mean_dxhat = F::zero();
                    let mut mean_dxhat_xhat = F::zero();
                    for j in 0..d {
                        let xhat = (row[j] - mu) / sd;
                        let dxhat = gr[(r, j)] * gslice[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                    }
                    mean_dxhat *= invd;
                    mean_dxhat_xhat *= invd;
                    for j in 0..d {
                        let xhat = (row[j] - mu) / sd;
                        let dxhat = gr[(r, j)] * gslice[j];
                        dx[(r, j)] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) / sd;
                    }
                }
                vec![dx.into_dyn()]
            })),
        )
    }

    /// Embedding lookup from a frozen table; the result is a constant
    /// node with no parents.
    pub fn gather_rows_frozen(&mut self, table: &ArrayD<F>, ids: &[usize]) -> Var {
        let tv = table
            .view()
            .into_dimensionality::<Ix2>()
            .expect("gather_rows_frozen expects [V, D]");
        let (v, d) = tv.dim();
        assert!(ids.iter().all(|&i| i < v), "token id out of range");
        let mut y = Array2::<F>::zeros((ids.len(), d));
        for (r, &id) in ids.iter().enumerate() {
            y.row_mut(r).assign(&tv.row(id));
        }
        self.push(y.into_dyn(), Vec::new(), None)
    }
}

fn moments<F: Scalar>(row: impl Iterator<Item = F> + Clone, d: usize, eps: F) -> (F, F) {
    let invd = F::from_usize(d).recip();
    let mu = row.clone().sum::<F>() * invd;
    let var = row.map(|v| (v - mu) * (v - mu)).sum::<F>() * invd;
    (mu, (var + eps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn frozen_ops_match_trainable_ops() {
        let x0 = arr2(&[[0.3f64, -0.2, 0.5], [0.1, 0.9, -0.4]]).into_dyn();
        let w0 = arr2(&[[0.2f64, -0.1], [0.4, 0.3], [-0.5, 0.6]]).into_dyn();

        let mut t1 = Tape::<f64>::new();
        let x = t1.leaf(x0.clone());
        let w = t1.leaf(w0.clone());
        let y1 = t1.matmul(x, w);

        let mut t2 = Tape::<f64>::new();
        let x2 = t2.leaf(x0.clone());
        let y2 = t2.matmul_frozen(x2, Arc::new(w0));
        assert_eq!(t1.value(y1), t2.value(y2));

        let s1 = t1.sum(y1);
        let s2 = t2.sum(y2);
        let g1 = t1.backward(s1);
        let g2 = t2.backward(s2);
        assert_eq!(g1.wrt(x).unwrap(), g2.wrt(x2).unwrap());
    }
}
