//! Central-difference gradient checking.
//!
//! The harness is intentionally independent of the tape: callers supply a
//! plain evaluation closure and the analytic gradient to verify, so the
//! numeric route never shares code with the path under test.

use ndarray::ArrayD;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub rel_tol: f64,
    /// Denominator floor; coordinates where both gradients fall below it
    /// count as agreement.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            rel_tol: 1e-3,
            floor: 1e-6,
        }
    }
}

impl GradCheckConfig {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<WorstCoord>,
}

#[derive(Debug, Clone)]
pub struct WorstCoord {
    pub coord: usize,
    pub numeric: f64,
    pub analytic: f64,
}

impl GradReport {
    pub fn passes(&self, cfg: &GradCheckConfig) -> bool {
        self.max_rel_err < cfg.rel_tol
    }
}

/// Draws up to `n` distinct flat coordinates from `0..len`.
pub fn sample_coords<R: Rng>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < n {
        picked.insert(rng.gen_range(0..len));
    }
    picked.into_iter().collect()
}

/// Compares an analytic gradient against central differences of `f` at the
/// given flat coordinates of `x0`.
pub fn check_scalar_fn(
    f: &mut dyn FnMut(&ArrayD<f64>) -> f64,
    x0: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    coords: &[usize],
    cfg: &GradCheckConfig,
) -> GradReport {
    assert_eq!(
        x0.shape(),
        analytic.shape(),
        "analytic gradient shape mismatch"
    );
    let base = x0
        .as_standard_layout()
        .to_owned();
    let ana = analytic.as_standard_layout().to_owned();
    let ana_slice = ana.as_slice().unwrap();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    for &i in coords {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus.as_slice_mut().unwrap()[i] += cfg.step;
        minus.as_slice_mut().unwrap()[i] -= cfg.step;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * cfg.step);
        let analytic_i = ana_slice[i];
        let denom = numeric.abs().max(analytic_i.abs()).max(cfg.floor);
        let rel = (numeric - analytic_i).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = Some(WorstCoord {
                coord: i,
                numeric,
                analytic: analytic_i,
            });
        }
    }
    GradReport {
        checked: coords.len(),
        max_rel_err,
        worst,
    }
}

/// Panics with diagnostics when the analytic gradient disagrees with
/// central differences.
pub fn assert_gradients_match(
    f: &mut dyn FnMut(&ArrayD<f64>) -> f64,
    x0: &ArrayD<f64>,
    analytic: &ArrayD<f64>,
    coords: &[usize],
    cfg: &GradCheckConfig,
) -> GradReport {
    let report = check_scalar_fn(f, x0, analytic, coords, cfg);
    assert!(
        report.passes(cfg),
        "gradient check failed: max relative error {:.3e} (tol {:.1e}) at {:?}",
        report.max_rel_err,
        cfg.rel_tol,
        report.worst
    );
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn quadratic_gradient_matches() {
        // f(x) = sum(x^2); grad = 2x
        let x0 = arr1(&[1.0, -2.0, 3.0]).into_dyn();
        let grad = x0.mapv(|v| 2.0 * v);
        let coords: Vec<usize> = (0..3).collect();
        let mut f = |x: &ArrayD<f64>| x.iter().map(|v| v * v).sum::<f64>();
        let report =
            check_scalar_fn(&mut f, &x0, &grad, &coords, &GradCheckConfig::default());
        assert!(report.max_rel_err < 1e-6, "err {}", report.max_rel_err);
    }

    #[test]
    fn detects_wrong_gradient() {
        let x0 = arr1(&[1.0, 2.0]).into_dyn();
        let wrong = x0.mapv(|v| 3.0 * v);
        let coords = vec![0usize, 1];
        let mut f = |x: &ArrayD<f64>| x.iter().map(|v| v * v).sum::<f64>();
        let report =
            check_scalar_fn(&mut f, &x0, &wrong, &coords, &GradCheckConfig::default());
        assert!(!report.passes(&GradCheckConfig::default()));
    }
}
