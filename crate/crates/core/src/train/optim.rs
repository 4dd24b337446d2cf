//! Adam optimizer and global gradient-norm clipping.

use ndarray::ArrayD;

use crate::error::{Error, Result};

/// Adam with optional L2 weight decay folded into the gradient (the
/// common deep-learning-framework convention). Parameters without a
/// gradient are skipped entirely: no moment update, no decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32, weight_decay: f32, shapes: &[Vec<usize>]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes
                .iter()
                .map(|s| ArrayD::zeros(ndarray::IxDyn(s)))
                .collect(),
            v: shapes
                .iter()
                .map(|s| ArrayD::zeros(ndarray::IxDyn(s)))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i] = None` leaves `params[i]` untouched.
    pub fn step(
        &mut self,
        params: &mut [ArrayD<f32>],
        grads: &[Option<ArrayD<f32>>],
    ) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter count mismatch");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (lr, b1, b2, eps, wd) = (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
        for i in 0..params.len() {
            let Some(grad) = &grads[i] else { continue };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::invalid_state(format!(
                    "non-finite gradient for parameter {i}"
                )));
            }
            let p = &mut params[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::azip!((p in p, m in m, v in v, &g in grad) {
                let g = g + wd * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }

    /// Moment tensors for checkpointing, in parameter order.
    pub fn moments(&self) -> (&[ArrayD<f32>], &[ArrayD<f32>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<ArrayD<f32>>, v: Vec<ArrayD<f32>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::invalid_state(
                "optimizer moment count does not match parameters",
            ));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Clips the global L2 norm of a gradient set to `max_norm`. Returns the
/// pre-clip norm.
pub fn clip_gradient_norm(grads: &mut [Option<ArrayD<f32>>], max_norm: f32) -> Result<f32> {
    let mut total = 0.0f64;
    for g in grads.iter().flatten() {
        for &x in g.iter() {
            if !x.is_finite() {
                return Err(Error::invalid_state("non-finite gradient"));
            }
            total += (x as f64) * (x as f64);
        }
    }
    let norm = total.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * scale);
        }
    }
    Ok(norm)
}
