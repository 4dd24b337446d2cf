//! Elementwise, reduction and shape operators.

use ndarray::{concatenate, ArrayD, Axis, IxDyn, Slice, Zip};

use crate::{Scalar, Tape, Var};

fn stable_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        (F::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn stable_softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<F: Scalar> Tape<F> {
    fn unary(&mut self, x: Var, fwd: fn(F) -> F, dydx: fn(F, F) -> F) -> Var {
        let y = self.value(x).mapv(fwd);
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, y| {
                vec![Zip::from(g)
                    .and(ps[0])
                    .and(y)
                    .map_collect(|&g, &x, &y| g * dydx(x, y))]
            })),
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        fwd: fn(F, F) -> F,
        da: fn(F, F) -> F,
        db: fn(F, F) -> F,
    ) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "elementwise shape mismatch"
        );
        let y = Zip::from(self.value(a))
            .and(self.value(b))
            .map_collect(|&x, &z| fwd(x, z));
        self.push(
            y,
            vec![a, b],
            Some(Box::new(move |g, ps, _| {
                let ga = Zip::from(g)
                    .and(ps[0])
                    .and(ps[1])
                    .map_collect(|&g, &x, &z| g * da(x, z));
                let gb = Zip::from(g)
                    .and(ps[0])
                    .and(ps[1])
                    .map_collect(|&g, &x, &z| g * db(x, z));
                vec![ga, gb]
            })),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, z| x + z, |_, _| F::one(), |_, _| F::one())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, z| x - z, |_, _| F::one(), |_, _| -F::one())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, z| x * z, |_, z| z, |x, _| x)
    }

    /// `a*x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: F, b: F) -> Var {
        let y = self.value(x).mapv(|v| a * v + b);
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, _, _| vec![g.mapv(|v| v * a)])),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -F::one(), F::zero())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.abs(),
            |x, _| {
                if x > F::zero() {
                    F::one()
                } else if x < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > F::zero() { v } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, stable_sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), |x, _| x.recip())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.sqrt(),
            |_, y| (F::from_f64(2.0) * y).recip(),
        )
    }

    pub fn sqr(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| F::from_f64(2.0) * x)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.recip(), |_, y| -(y * y))
    }

    /// Numerically stable `ln(1 + exp(x))`.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, stable_softplus, |x, _| stable_sigmoid(x))
    }

    /// Elementwise sum of several same-shape nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_n needs at least one input");
        let shape = self.value(parts[0]).raw_dim();
        let mut acc = ArrayD::<F>::zeros(shape.clone());
        for p in parts {
            assert_eq!(self.value(*p).raw_dim(), shape, "add_n shape mismatch");
            acc += self.value(*p);
        }
        let n = parts.len();
        self.push(
            acc,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| vec![g.clone(); n])),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let y = ArrayD::from_elem(IxDyn(&[]), total);
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let gs = *g.iter().next().unwrap();
                vec![ArrayD::from_elem(ps[0].raw_dim(), gs)]
            })),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        assert!(n > 0, "mean of empty tensor");
        let inv = F::from_usize(n).recip();
        let total = self.value(x).sum() * inv;
        let y = ArrayD::from_elem(IxDyn(&[]), total);
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let gs = *g.iter().next().unwrap() * inv;
                vec![ArrayD::from_elem(ps[0].raw_dim(), gs)]
            })),
        )
    }

    /// Mean over the trailing channel axis: `[H, W, C] -> [H, W]`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        assert_eq!(v.ndim(), 3, "channel_mean expects [H, W, C]");
        let c = v.shape()[2];
        let inv = F::from_usize(c).recip();
        let y = v.sum_axis(Axis(2)).mapv(|s| s * inv);
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let shape = ps[0].raw_dim();
                let expanded = g
                    .clone()
                    .insert_axis(Axis(2))
                    .broadcast(shape.clone())
                    .expect("channel_mean broadcast")
                    .mapv(|v| v * inv);
                vec![expanded]
            })),
        )
    }

    /// Per-channel global means: `[H, W, C] -> [C]`.
    pub fn channel_means(&mut self, x: Var) -> Var {
        let v = self.value(x);
        assert_eq!(v.ndim(), 3, "channel_means expects [H, W, C]");
        let (h, w) = (v.shape()[0], v.shape()[1]);
        let inv = F::from_usize(h * w).recip();
        let y = v.sum_axis(Axis(0)).sum_axis(Axis(0)).mapv(|s| s * inv);
        self.push(
            y.into_dyn(),
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let mut dx = ArrayD::<F>::zeros(ps[0].raw_dim());
                let c = ps[0].shape()[2];
                for ci in 0..c {
                    let gc = g[[ci]] * inv;
                    dx.slice_axis_mut(Axis(2), Slice::from(ci..ci + 1))
                        .mapv_inplace(|_| gc);
                }
                vec![dx]
            })),
        )
    }

    /// Extracts a single element (by flat index) as a 0-d node.
    pub fn element(&mut self, x: Var, flat: usize) -> Var {
        let v = self.value(x);
        assert!(flat < v.len(), "element index out of range");
        let val = v.as_slice().expect("standard layout")[flat];
        let y = ArrayD::from_elem(IxDyn(&[]), val);
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let gs = *g.iter().next().unwrap();
                let mut dx = ArrayD::<F>::zeros(ps[0].raw_dim());
                dx.as_slice_mut().expect("standard layout")[flat] = gs;
                vec![dx]
            })),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x);
        assert_eq!(
            v.len(),
            shape.iter().product::<usize>(),
            "reshape length mismatch"
        );
        let y = v
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape");
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, _| {
                vec![g
                    .to_owned()
                    .into_shape_with_order(ps[0].raw_dim())
                    .expect("reshape backward")]
            })),
        )
    }

    /// Contiguous slice along one axis.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let v = self.value(x);
        assert!(axis < v.ndim() && start + len <= v.shape()[axis], "narrow out of range");
        let y = v
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let mut dx = ArrayD::<F>::zeros(ps[0].raw_dim());
                dx.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![dx]
            })),
        )
    }

    /// Concatenation along one axis.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat needs at least one input");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let y = concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let lens: Vec<usize> = parts
            .iter()
            .map(|p| self.value(*p).shape()[axis])
            .collect();
        self.push(
            y,
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(lens.len());
                let mut offset = 0usize;
                for len in &lens {
                    out.push(
                        g.slice_axis(Axis(axis), Slice::from(offset..offset + len))
                            .to_owned(),
                    );
                    offset += len;
                }
                out
            })),
        )
    }

    /// Transpose of a 2-d node.
    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x);
        assert_eq!(v.ndim(), 2, "transpose expects a matrix");
        let y = v.t().to_owned();
        self.push(
            y,
            vec![x],
            Some(Box::new(|g, _, _| vec![g.t().to_owned()])),
        )
    }

    /// Scales a tensor by a 0-d node.
    pub fn mul_scalar_node(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "scale factor must be 0-d");
        let sv = self.scalar_value(s);
        let y = self.value(x).mapv(|v| v * sv);
        self.push(
            y,
            vec![x, s],
            Some(Box::new(move |g, ps, _| {
                let sv = *ps[1].iter().next().unwrap();
                let gx = g.mapv(|v| v * sv);
                let gs = Zip::from(g).and(ps[0]).fold(F::zero(), |acc, &g, &x| acc + g * x);
                vec![gx, ArrayD::from_elem(IxDyn(&[]), gs)]
            })),
        )
    }

    /// Forward difference along `axis` with the trailing slot set to zero,
    /// preserving shape: `y[i] = x[i+1] - x[i]`, `y[last] = 0`.
    pub fn forward_diff(&mut self, x: Var, axis: usize) -> Var {
        let v = self.value(x);
        assert!(axis < v.ndim(), "axis out of range");
        let l = v.shape()[axis];
        let mut y = ArrayD::<F>::zeros(v.raw_dim());
        if l > 1 {
            let hi = v.slice_axis(Axis(axis), Slice::from(1..l));
            let lo = v.slice_axis(Axis(axis), Slice::from(0..l - 1));
            y.slice_axis_mut(Axis(axis), Slice::from(0..l - 1))
                .assign(&(&hi - &lo));
        }
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, ps, _| {
                let mut dx = ArrayD::<F>::zeros(ps[0].raw_dim());
                if l > 1 {
                    let gd = g.slice_axis(Axis(axis), Slice::from(0..l - 1));
                    let mut hi = dx.slice_axis_mut(Axis(axis), Slice::from(1..l));
                    hi += &gd;
                    let mut lo = dx.slice_axis_mut(Axis(axis), Slice::from(0..l - 1));
                    lo -= &gd;
                }
                vec![dx]
            })),
        )
    }

    /// Adds a `[D]` vector to every row of a `[T, D]` matrix.
    pub fn add_row(&mut self, x: Var, v: Var) -> Var {
        let xs = self.value(x);
        let vs = self.value(v);
        assert_eq!(xs.ndim(), 2, "add_row expects a matrix");
        assert_eq!(vs.ndim(), 1, "add_row expects a vector");
        assert_eq!(xs.shape()[1], vs.shape()[0], "add_row width mismatch");
        let y = xs + &vs.broadcast(xs.raw_dim()).expect("row broadcast");
        self.push(
            y,
            vec![x, v],
            Some(Box::new(|g, _, _| {
                vec![g.clone(), g.sum_axis(Axis(0))]
            })),
        )
    }

    /// Per-channel affine with constant coefficients: `y[..,c] = x[..,c]*scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Vec<F>, shift: Vec<F>) -> Var {
        let v = self.value(x);
        assert_eq!(v.ndim(), 3, "channel_affine expects [H, W, C]");
        let c = v.shape()[2];
        assert!(scale.len() == c && shift.len() == c, "coefficient length mismatch");
        let mut y = v.to_owned();
        for ci in 0..c {
            let (a, b) = (scale[ci], shift[ci]);
            y.slice_axis_mut(Axis(2), Slice::from(ci..ci + 1))
                .mapv_inplace(|v| a * v + b);
        }
        self.push(
            y,
            vec![x],
            Some(Box::new(move |g, _, _| {
                let mut dx = g.clone();
                for (ci, &a) in scale.iter().enumerate() {
                    dx.slice_axis_mut(Axis(2), Slice::from(ci..ci + 1))
                        .mapv_inplace(|v| v * a);
                }
                vec![dx]
            })),
        )
    }

    /// Dot product of two `[D]` vectors as a 0-d node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.mul(a, b);
        self.sum(prod)
    }

    /// Scales a vector to unit L2 norm (`eps` guards the zero vector).
    pub fn l2_normalize(&mut self, v: Var, eps: F) -> Var {
        let sq = self.sqr(v);
        let total = self.sum(sq);
        let shifted = self.affine(total, F::one(), eps * eps);
        let norm = self.sqrt(shifted);
        let inv = self.recip(norm);
        self.mul_scalar_node(v, inv)
    }
}
