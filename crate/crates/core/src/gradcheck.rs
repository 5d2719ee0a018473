//! Central finite-difference oracles for gradient verification.
//!
//! Checks are specified against 64-bit arithmetic: a scalar-valued function
//! is rebuilt from a flat parameter vector for every probe, and its analytic
//! gradient is compared coordinate-wise against `(f(x+h) - f(x-h)) / 2h`.

use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with a floor so near-zero gradient pairs compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Central finite differences of `f` at `x`.
pub fn central_differences(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grads = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe)?;
        probe[i] = orig - h;
        let fm = f(&probe)?;
        probe[i] = orig;
        grads.push((fp - fm) / (2.0 * h));
    }
    Ok(grads)
}

/// Outcome of comparing an analytic gradient against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Coordinate where the worst disagreement occurred.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Compares `analytic` against central differences of `f` at `x`.
pub fn compare(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<GradCheck> {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let numeric = central_differences(f, x, h)?;
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: analytic.first().copied().unwrap_or(0.0),
        numeric_at_worst: numeric.first().copied().unwrap_or(0.0),
    };
    for i in 0..x.len() {
        let e = rel_err(analytic[i], numeric[i]);
        if e > worst.max_rel_err {
            worst.max_rel_err = e;
            worst.worst_index = i;
            worst.analytic_at_worst = analytic[i];
            worst.numeric_at_worst = numeric[i];
        }
    }
    Ok(worst)
}
